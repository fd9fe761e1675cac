"""Synthetic datasets, sparse ground truths, and pooled teacher networks.

Conventions: samples are *columns* of the data matrices (X, Z, Y), matching
the rest of the package. The LASSO module transposes internally to its
rows-are-samples convention; that boundary is a single explicit transpose.

Targets are always computed on the *clean* inputs: Y depends on X only,
never on the noise Z.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import container
from .numerics import NumericsError, SeededRng, gaussian_mat


@dataclass(frozen=True)
class Dataset:
    """Clean inputs X, noise Z, noisy inputs Xeps = X + Z, targets Y.

    Shapes: X, Z, Xeps are (d_x, n_samples); Y is (d_y, n_samples).
    """

    X: np.ndarray
    Z: np.ndarray
    Xeps: np.ndarray
    Y: np.ndarray
    sigma_eps: float
    seed: int

    def __post_init__(self):
        if not (self.X.shape == self.Z.shape == self.Xeps.shape):
            raise ValueError("X, Z, Xeps must share one shape")
        if self.Y.shape[1] != self.X.shape[1]:
            raise ValueError("Y and X must have the same number of columns")

    @property
    def d_x(self) -> int:
        return self.X.shape[0]

    @property
    def d_y(self) -> int:
        return self.Y.shape[0]

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SparseGroundTruth:
    """Sparse linear ground truth: first ``s`` entries of beta are nonzero.

    ``blocks`` partitions indices {0..s-1} into contiguous runs of length
    ``group_size``; block i is [i*g, (i+1)*g).
    """

    beta: np.ndarray
    s: int
    group_size: int
    blocks: tuple = field(repr=False)

    @property
    def d_x(self) -> int:
        return self.beta.shape[0]

    def with_group_size(self, g: int) -> "SparseGroundTruth":
        """Same beta, repartitioned into blocks of size ``g``."""
        return SparseGroundTruth(self.beta, self.s, g, _contiguous_blocks(self.s, g))

    def block_vector(self, i: int) -> np.ndarray:
        """Full-length vector that is beta on block i and zero elsewhere."""
        v = np.zeros(self.d_x)
        idx = self.blocks[i]
        v[idx] = self.beta[idx]
        return v


@dataclass(frozen=True)
class PooledTeacher:
    """Two-layer teacher whose hidden features are pooled in groups of g.

    W1 is (m, d_x); P is (m/g, m) with each row summing one group of g
    consecutive neurons; W2 is (d_y, m/g) and acts on the pooled features.
    """

    W1: np.ndarray
    W2: np.ndarray
    P: np.ndarray
    g: int

    @property
    def m(self) -> int:
        return self.W1.shape[0]

    def composite_linear(self) -> np.ndarray:
        """W2 @ P @ W1 -- the end-to-end map when the activation is identity."""
        return self.W2 @ self.P @ self.W1


def _contiguous_blocks(s: int, g: int) -> tuple:
    if g < 1 or s % g != 0:
        raise NumericsError(f"group size {g} must divide s={s}")
    return tuple(np.arange(i * g, (i + 1) * g) for i in range(s // g))


def pooling_matrix(m: int, g: int) -> np.ndarray:
    """0/1 matrix of shape (m/g, m) summing every g consecutive neurons."""
    if g < 1 or m % g != 0:
        raise NumericsError(f"group size {g} must divide m={m}")
    p = np.zeros((m // g, m))
    for i in range(m // g):
        p[i, i * g : (i + 1) * g] = 1.0
    return p


def make_regression_dataset(
    rng: SeededRng,
    d_x: int,
    d_y: int,
    n_samples: int,
    sigma_eps: float,
    target_fn: Callable[[np.ndarray], np.ndarray],
) -> Dataset:
    """Draw X ~ N(0, I), Z ~ N(0, sigma_eps^2 I); targets from clean columns.

    ``target_fn`` maps one clean column (shape (d_x,)) to the d_y target; it
    covers both linear beta^T x targets and teacher-network targets.
    """
    if n_samples < 1:
        raise NumericsError(f"n_samples must be >= 1, got {n_samples}")
    if sigma_eps < 0:
        raise NumericsError(f"sigma_eps must be >= 0, got {sigma_eps}")
    x = gaussian_mat(rng.child(0), d_x, n_samples, 1.0)
    z = gaussian_mat(rng.child(1), d_x, n_samples, sigma_eps)
    cols = [np.atleast_1d(np.asarray(target_fn(x[:, i]), dtype=np.float64)) for i in range(n_samples)]
    y = np.column_stack(cols)
    if y.shape[0] != d_y:
        raise NumericsError(f"target_fn returned dimension {y.shape[0]}, expected d_y={d_y}")
    return Dataset(X=x, Z=z, Xeps=x + z, Y=y, sigma_eps=float(sigma_eps), seed=rng.seed)


def make_sparse_beta(d_x: int, s: int, value: float, group_size: int = 1) -> SparseGroundTruth:
    """beta with its first s entries equal to ``value``, zero elsewhere."""
    if not 1 <= s <= d_x:
        raise NumericsError(f"need 1 <= s <= d_x, got s={s}, d_x={d_x}")
    beta = np.zeros(d_x)
    beta[:s] = value
    return SparseGroundTruth(beta, s, group_size, _contiguous_blocks(s, group_size))


def make_diagonal_teacher(gt: SparseGroundTruth, g: int) -> PooledTeacher:
    """Teacher whose i-th hidden neuron encodes exactly beta_i.

    W1 is (s, d_x) with beta_i at (i, i) and zeros elsewhere; W2 is all ones
    on the s/g pooled groups. The composite W2 P W1 x equals beta^T x for
    every valid g.
    """
    s = gt.s
    if g < 1 or s % g != 0:
        raise NumericsError(f"group size {g} must divide s={s}")
    w1 = np.zeros((s, gt.d_x))
    for i in range(s):
        w1[i, i] = gt.beta[i]
    w2 = np.ones((1, s // g))
    return PooledTeacher(W1=w1, W2=w2, P=pooling_matrix(s, g), g=g)


def make_relu_teacher(
    rng: SeededRng, d_x: int, m: int, g: int, sign_split: bool = False
) -> PooledTeacher:
    """Wide random teacher with pooled second layer.

    W1 entries are N(0, 2/(d_x+m)). W2 is all ones across the m/g groups, or
    +1 on the first half of the groups and -1 on the second half when
    ``sign_split`` (requires m/g even). With ones (or the split), the full
    function W2 P sigma(W1 .) does not depend on g.
    """
    if g < 1 or m % g != 0:
        raise NumericsError(f"group size {g} must divide m={m}")
    n_groups = m // g
    if sign_split and n_groups % 2 != 0:
        raise NumericsError(f"sign_split requires m/g even, got m/g={n_groups}")
    w1 = gaussian_mat(rng, m, d_x, np.sqrt(2.0 / (d_x + m)))
    w2 = np.ones((1, n_groups))
    if sign_split:
        w2[0, n_groups // 2 :] = -1.0
    return PooledTeacher(W1=w1, W2=w2, P=pooling_matrix(m, g), g=g)


def save_dataset(ds: Dataset, base: str | Path) -> None:
    """Persist to the shared binary+JSON container (Xeps is recomputed on load)."""
    meta = {
        "kind": "dataset",
        "d_x": ds.d_x,
        "d_y": ds.d_y,
        "n_samples": ds.n_samples,
        "sigma_eps": ds.sigma_eps,
        "seed": ds.seed,
    }
    container.save_arrays(base, {"X": ds.X, "Z": ds.Z, "Y": ds.Y}, meta)


def load_dataset(base: str | Path) -> Dataset:
    arrays, meta = container.load_arrays(base)
    if meta.get("kind") != "dataset":
        raise ValueError(f"container at {base} is not a dataset (kind={meta.get('kind')!r})")
    x, z, y = arrays["X"], arrays["Z"], arrays["Y"]
    return Dataset(X=x, Z=z, Xeps=x + z, Y=y, sigma_eps=meta["sigma_eps"], seed=meta["seed"])

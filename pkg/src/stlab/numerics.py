"""Dense linear-algebra kernel and deterministic random sampling.

Everything downstream builds on the few operations here: symmetric
eigendecomposition with a canonical basis completion, minimum-Frobenius-norm
least squares, scaled Gaussian sampling, and a split-stream RNG so that
parallel sweep points draw independent, reproducible streams.

All matrices are plain float64 ``numpy.ndarray`` with shape (rows, cols).
Operations are pure functions of their inputs and never mutate arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-8


class NumericsError(ValueError):
    """Raised when an input violates an operation's preconditions."""


@dataclass(frozen=True)
class SeededRng:
    """Value-type handle for a reproducible random stream.

    Identical (seed, stream) always produces the identical sample sequence,
    independent of process, thread schedule, or call order elsewhere.
    ``child(k)`` derives a statistically independent substream, so concurrent
    sweep points can each own a stream without coordination.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def child(self, k: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + (int(k),))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.default_rng(seq)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise NumericsError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericsError(f"{name} contains NaN or Inf entries")
    return m


def gaussian_mat(rng: SeededRng, rows: int, cols: int, std: float) -> np.ndarray:
    """iid N(0, std^2) matrix, deterministic per (seed, stream)."""
    if std < 0:
        raise NumericsError(f"std must be >= 0, got {std}")
    return rng.generator().normal(0.0, std, size=(rows, cols))


def sym_eig_topk(m, k: int, sym_tol: float = 1e-10):
    """Top-k eigenpairs of a symmetric matrix, eigenvalues descending.

    When the trailing requested eigenvalues are numerically zero (rank
    deficiency), the corresponding eigenvector columns are replaced by a
    canonical completion: Gram-Schmidt of the standard basis vectors, taken
    in index order, against the columns already kept. This pins down an
    otherwise arbitrary choice so results are reproducible.

    Returns (eigvecs n-by-k with orthonormal columns, eigvals length k).
    """
    m = as_matrix(m, "m")
    n = m.shape[0]
    if m.shape[1] != n:
        raise NumericsError(f"matrix must be square, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    asym = float(np.abs(m - m.T).max())
    if asym > sym_tol * scale:
        raise NumericsError(
            f"matrix is not symmetric: max |M - M^T| = {asym:.3e} "
            f"exceeds {sym_tol:.1e} * scale {scale:.3e}"
        )
    if not 1 <= k <= n:
        raise NumericsError(f"k must satisfy 1 <= k <= {n}, got {k}")

    msym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(msym)
    order = np.argsort(vals)[::-1]
    vals = vals[order][:k]
    vecs = vecs[:, order][:, :k]

    # Rank-deficient tail: eigh's null-space vectors are arbitrary, so swap
    # in the canonical Gram-Schmidt completion for reproducibility.
    zero_cut = 1e-12 * scale * n
    rank = int(np.sum(np.abs(vals) > zero_cut))
    if rank < k:
        kept = vecs[:, :rank]
        extra = _complete_basis(kept, k - rank, n)
        vecs = np.hstack([kept, extra])
        vals = vals.copy()
        vals[rank:] = 0.0
    return vecs, vals


def _complete_basis(kept: np.ndarray, want: int, n: int) -> np.ndarray:
    """Gram-Schmidt standard basis vectors in index order against ``kept``."""
    cols = [kept[:, j] for j in range(kept.shape[1])]
    out = []
    for i in range(n):
        if len(out) == want:
            break
        v = np.zeros(n)
        v[i] = 1.0
        for u in cols:
            v -= (u @ v) * u
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            v /= norm
            cols.append(v)
            out.append(v)
    if len(out) < want:
        raise NumericsError("failed to complete orthonormal basis")
    return np.column_stack(out)


def least_squares_min_norm(a, b) -> np.ndarray:
    """Minimum-Frobenius-norm W solving W @ a ~ b in least squares.

    Among all minimizers of ||W a - b||_F the returned W has the smallest
    Frobenius norm (the pseudoinverse solution b a^+).
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise NumericsError(
            f"column mismatch: a has shape {a.shape}, b has shape {b.shape}; "
            "need a.cols == b.cols for W a ~ b"
        )
    # W a = b  <=>  a^T W^T = b^T; lstsq returns the min-norm solution.
    wt, *_ = np.linalg.lstsq(a.T, b.T, rcond=None)
    return wt.T


def lambda_max_sym(m, iters: int = 200, tol: float = 1e-10) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Deterministic start vector; used as the step-size stability diagnostic.
    """
    m = as_matrix(m, "m")
    n = m.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lam = 0.0
    for _ in range(iters):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v_new = w / norm
        lam_new = float(v_new @ (m @ v_new))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        v, lam = v_new, lam_new
    return lam

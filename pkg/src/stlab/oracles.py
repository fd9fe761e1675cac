"""Closed-form minimizers and exact population test error.

These are the independent verification targets for every trainer in the
package: the over-determined least-squares product Y Xeps^T (Xeps Xeps^T)^-1,
the under-determined minimum-norm product U_p U_p^T Y (Xeps^T Xeps)^-1 Xeps^T,
and the population test error of a linear predictor on noisy inputs,
||W - W*||_F^2 + sigma_eps^2 ||W||_F^2 (valid for identity-covariance x and
isotropic Gaussian input noise), with its minimizer W*/(1+sigma_eps^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .datagen import Dataset
from .numerics import NumericsError, as_matrix, sym_eig_topk


@dataclass(frozen=True)
class NoisyLinearEval:
    """Reference for the noisy-input population MSE of a linear predictor."""

    weights: np.ndarray  # (d_y, d_x); 1-D input is treated as a row
    sigma_eps: float

    def __post_init__(self):
        if self.sigma_eps < 0:
            raise NumericsError(f"sigma_eps must be >= 0, got {self.sigma_eps}")
        object.__setattr__(self, "weights", np.atleast_2d(np.asarray(self.weights, dtype=np.float64)))


class OracleSolution(NamedTuple):
    """Closed-form minimizer plus the Gram condition number used to build it."""

    W: np.ndarray
    cond: float


def ols_minimizer(ds: Dataset) -> OracleSolution:
    """Global least-squares product Y Xeps^T (Xeps Xeps^T)^-1 (n >= d_x regime)."""
    xe, y = ds.Xeps, ds.Y
    if ds.n_samples < ds.d_x:
        raise NumericsError(
            f"ols_minimizer needs n_samples >= d_x, got {ds.n_samples} < {ds.d_x}"
        )
    gram = xe @ xe.T
    svals = np.linalg.svd(gram, compute_uv=False)
    if svals[-1] <= 1e-12 * max(1.0, svals[0]):
        raise NumericsError(
            f"Xeps Xeps^T is singular: smallest singular value {svals[-1]:.3e}"
        )
    w = np.linalg.solve(gram, xe @ y.T).T
    return OracleSolution(W=w, cond=float(svals[0] / svals[-1]))


def min_norm_minimizer(ds: Dataset, p: int) -> OracleSolution:
    """Minimum-norm rank-limited product for the n < d_x regime.

    U_p holds the dominant p eigenvectors of Y Y^T; the returned product is
    U_p U_p^T Y (Xeps^T Xeps)^-1 Xeps^T, whose rows lie in col(Xeps).
    """
    xe, y = ds.Xeps, ds.Y
    if ds.n_samples >= ds.d_x:
        raise NumericsError(
            f"min_norm_minimizer needs n_samples < d_x, got {ds.n_samples} >= {ds.d_x}"
        )
    gram = xe.T @ xe
    svals = np.linalg.svd(gram, compute_uv=False)
    if svals[-1] <= 1e-12 * max(1.0, svals[0]):
        raise NumericsError(
            f"Xeps^T Xeps is singular: smallest singular value {svals[-1]:.3e}"
        )
    u_p, _ = sym_eig_topk(y @ y.T, min(p, ds.d_y))
    w = (u_p @ (u_p.T @ y)) @ np.linalg.solve(gram, xe.T)
    return OracleSolution(W=w, cond=float(svals[0] / svals[-1]))


def linear_test_error(w, ref: NoisyLinearEval) -> float:
    """Exact population MSE of predictor w on noisy inputs vs clean targets.

    Equals ||w - w*||_F^2 + sigma_eps^2 ||w||_F^2 for x with identity
    covariance and eps ~ N(0, sigma_eps^2 I).
    """
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    wstar = ref.weights
    if w.shape != wstar.shape:
        raise NumericsError(f"shape mismatch: predictor {w.shape} vs reference {wstar.shape}")
    diff = w - wstar
    return float(np.sum(diff * diff) + ref.sigma_eps**2 * np.sum(w * w))


def optimal_noisy_predictor(beta_star, sigma_eps: float):
    """Minimizer of the noisy-input test error and its value.

    Returns (beta_star / (1 + sigma_eps^2),
             sigma_eps^2 ||beta_star||^2 / (1 + sigma_eps^2)).
    """
    beta_star = np.asarray(beta_star, dtype=np.float64)
    shrink = 1.0 / (1.0 + sigma_eps**2)
    err = sigma_eps**2 * float(np.sum(beta_star * beta_star)) * shrink
    return beta_star * shrink, err


def mc_linear_test_error(
    w, ref: NoisyLinearEval, n_samples: int, seed: int
) -> float:
    """Monte Carlo estimate of :func:`linear_test_error` on fresh samples."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    wstar = ref.weights
    gen = np.random.default_rng(seed)
    d_x = wstar.shape[1]
    total = 0.0
    chunk = 20_000
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        x = gen.standard_normal((d_x, n))
        eps = ref.sigma_eps * gen.standard_normal((d_x, n))
        gap = w @ (x + eps) - wstar @ x
        total += float(np.sum(gap * gap))
        done += n
    return total / n_samples

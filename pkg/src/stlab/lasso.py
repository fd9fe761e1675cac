"""L1-regularized student-teacher transfer: solver, decomposition, diagnostics.

The solver minimizes ||A x - b||^2 / n + lam * ||x||_1 (the 1/n sits on the
quadratic term only) by cyclic coordinate descent with soft thresholding,
restricted to a growing working set so that high-dimensional fits stay cheap.
A full KKT pass certifies the solution.

Convention boundary: this module uses rows-are-samples designs; it builds
them from the columns-are-samples :class:`~stlab.datagen.Dataset` with one
explicit transpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .datagen import Dataset, SparseGroundTruth
from .numerics import NumericsError
from .oracles import NoisyLinearEval, linear_test_error


class LassoConvergenceError(RuntimeError):
    def __init__(self, sweeps: int, kkt: float):
        super().__init__(
            f"coordinate descent did not converge within {sweeps} sweeps; "
            f"max KKT violation {kkt:.3e}"
        )
        self.sweeps = sweeps
        self.kkt = kkt


@dataclass(frozen=True)
class LassoProblem:
    """Design A (n_samples rows), response b, objective ||Ax-b||^2/n + lam ||x||_1."""

    A: np.ndarray
    b: np.ndarray
    lam: float
    n_samples: int

    def __post_init__(self):
        if self.lam < 0:
            raise NumericsError(f"lam must be >= 0, got {self.lam}")
        if self.A.shape[0] != self.b.shape[0]:
            raise NumericsError(
                f"design has {self.A.shape[0]} rows but response has {self.b.shape[0]}"
            )


def objective(p: LassoProblem, x: np.ndarray) -> float:
    resid = p.A @ x - p.b
    return float(resid @ resid) / p.n_samples + p.lam * float(np.sum(np.abs(x)))


def kkt_violation(p: LassoProblem, x: np.ndarray) -> float:
    """Max violation of the subgradient optimality conditions.

    Active coordinates need (2/n) A_j^T (Ax-b) + lam*sign(x_j) = 0; inactive
    ones need |(2/n) A_j^T (Ax-b)| <= lam.
    """
    g = (2.0 / p.n_samples) * (p.A.T @ (p.A @ x - p.b))
    active = x != 0.0
    viol_active = np.abs(g[active] + p.lam * np.sign(x[active]))
    viol_inactive = np.maximum(np.abs(g[~active]) - p.lam, 0.0)
    out = 0.0
    if viol_active.size:
        out = max(out, float(viol_active.max()))
    if viol_inactive.size:
        out = max(out, float(viol_inactive.max()))
    return out


def _soft(z: float, thresh: float) -> float:
    if z > thresh:
        return z - thresh
    if z < -thresh:
        return z + thresh
    return 0.0


def lasso_solve(
    p: LassoProblem,
    tol: float = 1e-10,
    max_iters: int = 100_000,
    on_fail: str = "raise",
    sweep_objectives: list | None = None,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Coordinate-descent LASSO solution with a KKT certificate.

    Coordinates are updated cyclically in index order; a coordinate landing
    exactly on the threshold is set to 0. Sweeps stop when the largest
    coordinate change falls below tol * (1 + ||x||_inf) and no coordinate
    outside the working set violates the KKT conditions. ``on_fail`` is
    either "raise" (default, per the convergence contract) or "return" to
    hand back the best iterate for diagnostic sweeps. Pass a list as
    ``sweep_objectives`` to record the objective after every sweep; pass
    ``x0`` to warm-start (used when sweeping a lambda path).
    """
    n, d = p.A.shape
    col_sq = (2.0 / p.n_samples) * np.einsum("ij,ij->j", p.A, p.A)
    x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    resid = p.b - p.A @ x if x0 is not None else p.b.copy()  # b - A x

    kkt_scale = max(1.0, p.lam)
    grad0 = (2.0 / p.n_samples) * (p.A.T @ resid)
    kkt_scale = max(kkt_scale, float(np.max(np.abs(grad0))) if d else 1.0)
    vtol = max(tol * kkt_scale, 1e-14)

    # Seed the working set small (strongest violators plus any warm-start
    # support); the outer loop grows it only as KKT violations demand.
    excess = np.maximum(np.abs(grad0) - p.lam, 0.0)
    violators = np.flatnonzero(excess > 0.0)
    if violators.size > 20:
        order = np.argsort(excess[violators])[::-1]
        violators = violators[order[:20]]
    working = np.unique(np.concatenate([violators, np.flatnonzero(x != 0.0)]))
    sweeps_used = 0

    for _round in range(200):
        usable = working[col_sq[working] > 0.0]
        while sweeps_used < max_iters:
            sweeps_used += 1
            max_delta = 0.0
            for j in usable:
                old = x[j]
                u = (2.0 / p.n_samples) * float(p.A[:, j] @ resid) + col_sq[j] * old
                new = _soft(u, p.lam) / col_sq[j]
                if new != old:
                    resid += p.A[:, j] * (old - new)
                    x[j] = new
                    max_delta = max(max_delta, abs(new - old))
            if sweep_objectives is not None:
                sweep_objectives.append(objective(p, x))
            x_inf = float(np.max(np.abs(x))) if x.size else 0.0
            if max_delta < tol * (1.0 + x_inf):
                break
        else:
            break

        # Refresh the residual (incremental updates drift) and look for
        # coordinates outside the working set that violate optimality.
        resid = p.b - p.A @ x
        g = -(2.0 / p.n_samples) * (p.A.T @ resid)
        viol = np.maximum(np.abs(g) - p.lam, 0.0)
        viol[working] = 0.0
        viol[x != 0.0] = 0.0
        bad = np.flatnonzero(viol > vtol)
        if bad.size == 0:
            return x
        order = np.argsort(viol[bad])[::-1]
        grow = max(10, 2 * len(working))
        working = np.unique(np.concatenate([working, bad[order][:grow]]))

    if on_fail == "return":
        return x
    raise LassoConvergenceError(sweeps_used, kkt_violation(p, x))


def lambda_schedule(
    beta_block_norm: float,
    gamma: float,
    k_x: float,
    d_x: float,
    n_samples: int,
    sigma_eps: float,
) -> float:
    """Per-block penalty (20/gamma) * sqrt(log(d_x) sigma^2 ||beta_i||^2 K_x / n).

    Natural log. Requires the incoherence margin gamma to be positive.
    """
    if gamma <= 0:
        raise NumericsError(f"incoherence violated: gamma = {gamma} <= 0")
    if n_samples < 1:
        raise NumericsError(f"n_samples must be >= 1, got {n_samples}")
    return (20.0 / gamma) * np.sqrt(
        np.log(d_x) * sigma_eps**2 * beta_block_norm**2 * k_x / n_samples
    )


@dataclass(frozen=True)
class BlockDiagnostics:
    block: int
    incoherence: float
    lambda_min: float
    singular: bool


@dataclass(frozen=True)
class IncoherenceReport:
    """Measured premises of the support-recovery analysis.

    gamma = 1 - max over blocks and off-support columns of
    ||Xeps_j^T Xeps_S (Xeps_S^T Xeps_S)^-1||_1; lambda_min is the smallest
    eigenvalue of any block Gram Xeps_S^T Xeps_S / n; k_x is the largest
    normalized clean column norm. ``violated`` flags gamma <= 0.
    """

    gamma: float
    lambda_min: float
    k_x: float
    per_block: tuple[BlockDiagnostics, ...]

    @property
    def violated(self) -> bool:
        return self.gamma <= 0.0


@dataclass(frozen=True)
class StFit:
    """Decomposed student-teacher fit: one LASSO solution per teacher block."""

    w_blocks: list[np.ndarray]
    w_total: np.ndarray
    lambdas: list[float]
    diagnostics: IncoherenceReport
    supports: list[np.ndarray] = field(default_factory=list)


def incoherence_check(ds: Dataset, gt: SparseGroundTruth) -> IncoherenceReport:
    """Compute gamma, Lambda_min, K_x for the dataset's noisy design."""
    a = ds.Xeps.T  # rows are samples
    x_clean = ds.X.T
    n = ds.n_samples
    k_x = float(np.max(np.sum(x_clean * x_clean, axis=0)) / n)

    per_block = []
    worst_incoh = 0.0
    lam_min = np.inf
    for i, idx in enumerate(gt.blocks):
        sub = a[:, idx]
        gram = sub.T @ sub
        eigs = np.linalg.eigvalsh(gram / n)
        singular = bool(eigs[0] <= 1e-12 * max(1.0, eigs[-1]))
        if singular:
            per_block.append(BlockDiagnostics(i, np.inf, float(eigs[0]), True))
            worst_incoh = np.inf
            continue
        lam_min = min(lam_min, float(eigs[0]))
        basis = sub @ np.linalg.inv(gram)  # n x g
        corr = a.T @ basis  # d_x x g
        l1 = np.sum(np.abs(corr), axis=1)
        mask = np.ones(ds.d_x, dtype=bool)
        mask[idx] = False
        block_incoh = float(np.max(l1[mask])) if mask.any() else 0.0
        worst_incoh = max(worst_incoh, block_incoh)
        per_block.append(BlockDiagnostics(i, block_incoh, float(eigs[0]), False))

    return IncoherenceReport(
        gamma=1.0 - worst_incoh,
        lambda_min=float(lam_min) if np.isfinite(lam_min) else 0.0,
        k_x=k_x,
        per_block=tuple(per_block),
    )


def st_decomposed_fit(
    ds: Dataset,
    gt: SparseGroundTruth,
    lambdas: str | float | Sequence[float] = "auto",
    tol: float = 1e-10,
    max_iters: int = 100_000,
    report: IncoherenceReport | None = None,
) -> StFit:
    """Solve the s/g per-block transfer problems and assemble w_total.

    Each block i solves min_w ||Xeps w - X beta_i||^2 / n + lam_i ||w||_1
    with beta_i the ground truth restricted to block i. ``lambdas`` is
    "auto" (schedule from the measured incoherence report), one float for
    every block, or a per-block sequence.
    """
    a = ds.Xeps.T
    n_blocks = len(gt.blocks)
    if report is None:
        report = incoherence_check(ds, gt)

    if isinstance(lambdas, str):
        if lambdas != "auto":
            raise NumericsError(f"lambdas must be 'auto', a float, or a sequence, got {lambdas!r}")
        lam_list = [
            lambda_schedule(
                float(np.linalg.norm(gt.beta[idx])),
                report.gamma,
                report.k_x,
                ds.d_x,
                ds.n_samples,
                ds.sigma_eps,
            )
            for idx in gt.blocks
        ]
    elif np.isscalar(lambdas):
        lam_list = [float(lambdas)] * n_blocks
    else:
        lam_list = [float(v) for v in lambdas]
        if len(lam_list) != n_blocks:
            raise NumericsError(f"got {len(lam_list)} lambdas for {n_blocks} blocks")

    w_blocks = []
    supports = []
    for i in range(n_blocks):
        b = ds.X.T @ gt.block_vector(i)
        prob = LassoProblem(A=a, b=b, lam=lam_list[i], n_samples=ds.n_samples)
        try:
            w = lasso_solve(prob, tol=tol, max_iters=max_iters)
        except LassoConvergenceError as exc:
            err = LassoConvergenceError(exc.sweeps, exc.kkt)
            err.args = (f"block {i}: {err.args[0]}",)
            raise err from exc
        w_blocks.append(w)
        supports.append(np.flatnonzero(w))

    w_total = np.sum(w_blocks, axis=0)
    return StFit(
        w_blocks=w_blocks,
        w_total=w_total,
        lambdas=lam_list,
        diagnostics=report,
        supports=supports,
    )


class TargetFit(NamedTuple):
    w: np.ndarray
    error: float
    lam: float


def target_lasso_fit(
    ds: Dataset,
    gt: SparseGroundTruth,
    lambda_grid: Sequence[float],
    tol: float = 1e-8,
    max_iters: int = 20_000,
) -> TargetFit:
    """Target-based LASSO sweep; returns the fit with the best test error.

    Grid values are interpreted in the unnormalized objective
    ||Xeps b - X beta||^2 + lam ||b||_1 (the target problem is conventionally
    written without 1/n), so each is rescaled by 1/n before being handed to
    the shared normalized solver.
    """
    if len(lambda_grid) == 0:
        raise NumericsError("lambda_grid must be non-empty")
    a = ds.Xeps.T
    b = ds.X.T @ gt.beta
    ref = NoisyLinearEval(gt.beta, ds.sigma_eps)
    best = None
    warm = None
    # Descend the path and warm-start each fit from the previous solution.
    for lam in sorted(set(float(v) for v in lambda_grid), reverse=True):
        prob = LassoProblem(A=a, b=b, lam=lam / ds.n_samples, n_samples=ds.n_samples)
        w = lasso_solve(prob, tol=tol, max_iters=max_iters, on_fail="return", x0=warm)
        warm = w
        err = linear_test_error(w, ref)
        if best is None or err < best.error:
            best = TargetFit(w=w, error=err, lam=lam)
    return best

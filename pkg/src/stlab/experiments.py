"""Named, config-driven desk-scale experiment reproductions.

Each ``exp_*`` operation takes a config dataclass, runs deterministically
from the seeds it contains, and returns tabular results; ``emit_outputs``
writes one CSV per table, one vector plot, and a JSON manifest. Re-running
an identical config reproduces identical CSV bytes.

Cells and seeds are independent; set the ``workers`` config field (or the
STLAB_WORKERS environment variable) to run them under a process pool.
Assembly is keyed by cell coordinates, so results do not depend on worker
scheduling.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import Dataset, make_regression_dataset, make_relu_teacher, make_sparse_beta
from .lasso import st_decomposed_fit, incoherence_check, target_lasso_fit
from .linear_net import (
    LinearNetwork,
    TrainConfig,
    init_balanced,
    init_small_gaussian,
    train_gd,
)
from .numerics import SeededRng
from .oracles import (
    NoisyLinearEval,
    linear_test_error,
    min_norm_minimizer,
    ols_minimizer,
    optimal_noisy_predictor,
)
from .relu_net import (
    ReluTrainConfig,
    ShallowReluNet,
    from_pooled_teacher,
    pooled_student,
    train_relu,
    xavier_net,
)

LAMBDA_GRID_DEFAULT = tuple(float(v) for v in np.logspace(-4, 1, 7))


class ConfigError(ValueError):
    """Bad experiment configuration (unknown key, invalid value)."""


def config_from_dict(cls, data: dict):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - valid)
    if unknown:
        raise ConfigError(
            f"unknown config keys {unknown}; valid keys: {sorted(valid)}"
        )
    coerced = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            v = data[f.name]
            coerced[f.name] = tuple(v) if isinstance(v, list) else v
    return cls(**coerced)


def config_to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]


@dataclass
class SweepResult:
    """Tagged records (parameters -> error metrics) for one experiment."""

    experiment: str
    tables: dict[str, Table]
    meta: dict = field(default_factory=dict)


def _worker_count(cfg_workers) -> int:
    if cfg_workers:
        return int(cfg_workers)
    env = os.environ.get("STLAB_WORKERS")
    return int(env) if env else 1


def _run_tasks(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# Early stopping (noisy-input feature transfer with a wide ReLU teacher)


@dataclass
class EarlyStoppingConfig:
    d_x: int = 50
    m: int = 2000
    sigma_eps: float = 0.5
    ns_grid: tuple = (8, 16, 32, 64, 128)
    lam_grid: tuple = LAMBDA_GRID_DEFAULT
    seed: int = 0
    epochs: int = 2000
    eval_every: int = 50
    mc_eval_samples: int = 4000
    lr: float | None = None
    workers: int | None = None


def _early_run(cfg: EarlyStoppingConfig, n_s: int, lam: float | None):
    """Train one student at (n_s, lam); lam=None means the base loss."""
    root = SeededRng(cfg.seed)
    teacher = xavier_net(root.child(1), cfg.d_x, cfg.m)
    ds = make_regression_dataset(
        root.child(2).child(n_s), cfg.d_x, 1, n_s, cfg.sigma_eps, teacher.forward
    )
    student = xavier_net(root.child(3).child(n_s), cfg.d_x, cfg.m)
    rcfg = ReluTrainConfig(
        lr=cfg.lr,
        epochs=cfg.epochs,
        lam=lam if lam is not None else 0.0,
        eval_every=cfg.eval_every,
        mc_eval_samples=cfg.mc_eval_samples,
        seed=cfg.seed,
    )
    kind = "st" if lam is not None else "base"
    _best, _final, trace = train_relu(student, teacher, ds, rcfg, kind, eval_fn=teacher.forward)
    return trace.diagnostics["best_test_error"], trace.records[-1][3]


def _early_task(args):
    cfg, n_s, lam = args
    best, final = _early_run(cfg, n_s, lam)
    return (n_s, lam, best, final)


def exp_early_stopping(cfg: EarlyStoppingConfig) -> SweepResult:
    """Best-during-training vs end-of-training errors across the lambda sweep.

    Per n_s the summary reports the lambda with the best early-stopped error,
    that run's final error, and the early-stopped base-loss error.
    """
    tasks = []
    for n_s in cfg.ns_grid:
        tasks.append((cfg, n_s, None))
        for lam in cfg.lam_grid:
            tasks.append((cfg, n_s, float(lam)))
    results = _run_tasks(_early_task, tasks, _worker_count(cfg.workers))
    by_key = {(n_s, lam): (best, final) for n_s, lam, best, final in results}

    detail_rows = []
    summary_rows = []
    for n_s in cfg.ns_grid:
        base_best, base_final = by_key[(n_s, None)]
        picks = []
        for lam in cfg.lam_grid:
            best, final = by_key[(n_s, float(lam))]
            detail_rows.append((n_s, float(lam), best, final))
            picks.append((best, final, float(lam)))
        st_best, st_final, lam_star = min(picks)
        summary_rows.append((n_s, lam_star, st_best, st_final, base_best, base_final))

    return SweepResult(
        experiment="early-stopping",
        tables={
            "summary": Table(
                ("n_s", "lam_best", "st_early", "st_final", "base_early", "base_final"),
                tuple(summary_rows),
            ),
            "detail": Table(("n_s", "lam", "st_early", "st_final"), tuple(detail_rows)),
        },
        meta={"config": config_to_dict(cfg)},
    )


# ---------------------------------------------------------------------------
# Operating regime grid (synthetic regression analog of the N_t x N_s study)


@dataclass
class RegimeGridConfig:
    # Networks sized for feature learning: a narrow random "nature" map is
    # the ground truth, so teachers trained on enough clean samples acquire
    # features the student can usefully mimic.
    d_x: int = 16
    m_nature: int = 4
    m: int = 32
    # Noise matched to the source setting by signal scale: pixels with std
    # ~0.25 under sigma 0.5 correspond to unit-variance inputs under 2.0.
    sigma_eps: float = 2.0
    nt_grid: tuple = (4, 16, 64, 256)
    ns_grid: tuple = (2, 8, 32, 128)
    margin: float = 0.02
    lam: float = 3.0
    seeds: tuple = (0, 1, 2, 3, 4)
    teacher_epochs: int = 5000
    epochs: int = 3000
    eval_every: int = 100
    mc_eval_samples: int = 4000
    lr: float | None = None
    workers: int | None = None


@dataclass
class RegimeGrid:
    """Verdict grid with the raw errors the verdicts are recomputed from."""

    nt_grid: tuple
    ns_grid: tuple
    margin: float
    e_st: np.ndarray  # (n_t, n_s) seed means
    e_base: np.ndarray  # (n_s,)
    e_t: np.ndarray  # (n_t,)
    per_seed: Table
    meta: dict = field(default_factory=dict)

    def verdicts(self) -> np.ndarray:
        """True where student-teacher beats base learning by the margin."""
        return self.e_st <= (1.0 - self.margin) * self.e_base[None, :]

    def as_sweep_result(self) -> SweepResult:
        cell_rows = []
        for i, n_t in enumerate(self.nt_grid):
            for j, n_s in enumerate(self.ns_grid):
                verdict = self.e_st[i, j] <= (1.0 - self.margin) * self.e_base[j]
                cell_rows.append(
                    (n_t, n_s, self.e_st[i, j], self.e_base[j], int(verdict))
                )
        teacher_rows = [(n_t, self.e_t[i]) for i, n_t in enumerate(self.nt_grid)]
        return SweepResult(
            experiment="regime-grid",
            tables={
                "cells": Table(("n_t", "n_s", "e_st", "e_base", "beats_baseline"), tuple(cell_rows)),
                "teachers": Table(("n_t", "e_t"), tuple(teacher_rows)),
                "per_seed": self.per_seed,
            },
            meta=self.meta,
        )


def _nature_net(cfg, seed: int) -> ShallowReluNet:
    return xavier_net(SeededRng(seed).child(0xA), cfg.d_x, cfg.m_nature)


def _clean_dataset(x: np.ndarray, nature: ShallowReluNet, seed: int) -> Dataset:
    y = np.atleast_2d(nature.forward(x))
    return Dataset(X=x, Z=np.zeros_like(x), Xeps=x, Y=y, sigma_eps=0.0, seed=seed)


def _noisy_dataset(x: np.ndarray, z_unit: np.ndarray, sigma: float, nature, seed: int) -> Dataset:
    z = sigma * z_unit
    y = np.atleast_2d(nature.forward(x))
    return Dataset(X=x, Z=z, Xeps=x + z, Y=y, sigma_eps=sigma, seed=seed)


def _regime_teacher(cfg, seed: int, n_t: int, nt_max: int):
    """Early-stopped teacher trained on the first n_t clean pool samples.

    Sample counts are nested (same subset discipline): the n_t-sample run
    sees a prefix of the pool the larger runs see.
    """
    nature = _nature_net(cfg, seed)
    pool = SeededRng(seed).child(0xB).generator().standard_normal((cfg.d_x, nt_max))
    ds_t = _clean_dataset(pool[:, :n_t], nature, seed)
    init = xavier_net(SeededRng(seed).child(0xC), cfg.d_x, cfg.m)
    rcfg = ReluTrainConfig(
        lr=cfg.lr, epochs=cfg.teacher_epochs, lam=0.0, eval_every=cfg.eval_every,
        mc_eval_samples=cfg.mc_eval_samples, seed=seed,
    )
    best, _final, trace = train_relu(init, None, ds_t, rcfg, "base", eval_fn=nature.forward)
    return best, trace.diagnostics["best_test_error"], nature


def _student_pool(cfg, seed: int, ns_max: int):
    gen = SeededRng(seed).child(0xD).generator()
    x = gen.standard_normal((cfg.d_x, ns_max))
    z_unit = gen.standard_normal((cfg.d_x, ns_max))
    return x, z_unit


def _regime_cell_task(args):
    cfg, seed, n_t, n_s = args
    teacher, e_t, nature = _regime_teacher(cfg, seed, n_t, max(cfg.nt_grid))
    x, z_unit = _student_pool(cfg, seed, max(cfg.ns_grid))
    ds = _noisy_dataset(x[:, :n_s], z_unit[:, :n_s], cfg.sigma_eps, nature, seed)
    init = xavier_net(SeededRng(seed).child(0xE), cfg.d_x, cfg.m)
    rcfg = ReluTrainConfig(
        lr=cfg.lr, epochs=cfg.epochs, lam=cfg.lam, eval_every=cfg.eval_every,
        mc_eval_samples=cfg.mc_eval_samples, seed=seed,
    )
    _b, _f, trace = train_relu(init, teacher, ds, rcfg, "st", eval_fn=nature.forward)
    return (seed, n_t, n_s, trace.diagnostics["best_test_error"], e_t)


def _regime_base_task(args):
    cfg, seed, n_s = args
    nature = _nature_net(cfg, seed)
    x, z_unit = _student_pool(cfg, seed, max(cfg.ns_grid))
    ds = _noisy_dataset(x[:, :n_s], z_unit[:, :n_s], cfg.sigma_eps, nature, seed)
    init = xavier_net(SeededRng(seed).child(0xE), cfg.d_x, cfg.m)
    rcfg = ReluTrainConfig(
        lr=cfg.lr, epochs=cfg.epochs, lam=0.0, eval_every=cfg.eval_every,
        mc_eval_samples=cfg.mc_eval_samples, seed=seed,
    )
    _b, _f, trace = train_relu(init, None, ds, rcfg, "base", eval_fn=nature.forward)
    return (seed, n_s, trace.diagnostics["best_test_error"])


def exp_regime_grid(cfg: RegimeGridConfig) -> RegimeGrid:
    """Map where feature transfer beats base learning by the margin.

    Teachers see only clean samples; students and the base runs see noisy
    samples. Errors are averaged over the seed list before the verdict.
    """
    workers = _worker_count(cfg.workers)
    cell_tasks = [
        (cfg, seed, n_t, n_s)
        for seed in cfg.seeds
        for n_t in cfg.nt_grid
        for n_s in cfg.ns_grid
    ]
    base_tasks = [(cfg, seed, n_s) for seed in cfg.seeds for n_s in cfg.ns_grid]
    cells = _run_tasks(_regime_cell_task, cell_tasks, workers)
    bases = _run_tasks(_regime_base_task, base_tasks, workers)

    st = {(s, nt, ns): e for s, nt, ns, e, _ in cells}
    et = {}
    for s, nt, ns, _e, e_t in cells:
        et[(s, nt)] = e_t
    base = {(s, ns): e for s, ns, e in bases}

    e_st = np.array(
        [
            [np.mean([st[(s, nt, ns)] for s in cfg.seeds]) for ns in cfg.ns_grid]
            for nt in cfg.nt_grid
        ]
    )
    e_base = np.array([np.mean([base[(s, ns)] for s in cfg.seeds]) for ns in cfg.ns_grid])
    e_t = np.array([np.mean([et[(s, nt)] for s in cfg.seeds]) for nt in cfg.nt_grid])

    per_seed_rows = []
    for s in cfg.seeds:
        for nt in cfg.nt_grid:
            for ns in cfg.ns_grid:
                per_seed_rows.append((s, nt, ns, st[(s, nt, ns)], base[(s, ns)], et[(s, nt)]))
    per_seed = Table(("seed", "n_t", "n_s", "e_st", "e_base", "e_t"), tuple(per_seed_rows))

    return RegimeGrid(
        nt_grid=cfg.nt_grid,
        ns_grid=cfg.ns_grid,
        margin=cfg.margin,
        e_st=e_st,
        e_base=e_base,
        e_t=e_t,
        per_seed=per_seed,
        meta={"config": config_to_dict(cfg)},
    )


# ---------------------------------------------------------------------------
# Task-difficulty table: minimal teacher sample count per noise level


@dataclass
class DifficultyTableConfig:
    d_x: int = 16
    m_nature: int = 4
    m: int = 32
    n_s: int = 32
    margin: float = 0.04
    sigma_grid: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    # linear teacher-sample grid, the paper's step-of-100 scaled down
    nt_grid: tuple = (10, 20, 30, 40, 50, 60, 70, 80)
    lam: float = 3.0
    seeds: tuple = (0, 1, 2, 3, 4)
    teacher_epochs: int = 5000
    epochs: int = 3000
    eval_every: int = 75
    mc_eval_samples: int = 8000
    lr: float | None = None
    workers: int | None = None


def _difficulty_task(args):
    """Ascend the n_t grid for one (seed, sigma) until the verdict is green.

    The clean inputs and the unit noise draw are shared across the sigma
    grid (noise is scaled, not redrawn), so a seed's required-n_t profile
    is not washed out by dataset resampling noise.
    """
    cfg, seed, sigma = args
    nature = _nature_net(cfg, seed)
    x, z_unit = _student_pool(cfg, seed, cfg.n_s)
    ds = _noisy_dataset(x, z_unit, sigma, nature, seed)
    init = xavier_net(SeededRng(seed).child(0xE), cfg.d_x, cfg.m)
    rcfg_base = ReluTrainConfig(
        lr=cfg.lr, epochs=cfg.epochs, lam=0.0, eval_every=cfg.eval_every,
        mc_eval_samples=cfg.mc_eval_samples, seed=seed,
    )
    _b, _f, trace = train_relu(init, None, ds, rcfg_base, "base", eval_fn=nature.forward)
    e_base = trace.diagnostics["best_test_error"]

    rows = []
    required = None
    for n_t in cfg.nt_grid:
        teacher, e_t, _ = _regime_teacher(cfg, seed, n_t, max(cfg.nt_grid))
        rcfg = ReluTrainConfig(
            lr=cfg.lr, epochs=cfg.epochs, lam=cfg.lam, eval_every=cfg.eval_every,
            mc_eval_samples=cfg.mc_eval_samples, seed=seed,
        )
        _b, _f, tr = train_relu(init, teacher, ds, rcfg, "st", eval_fn=nature.forward)
        e_st = tr.diagnostics["best_test_error"]
        rows.append((seed, sigma, n_t, e_st, e_base, e_t))
        if e_st <= (1.0 - cfg.margin) * e_base:
            required = n_t
            break
    return seed, sigma, required, rows


def exp_difficulty_table(cfg: DifficultyTableConfig) -> SweepResult:
    """Per noise level, the smallest teacher sample count that beats base.

    A noise level whose whole grid fails is recorded as exceeding the grid
    (required_nt empty, exceeds_grid=1). The meta block reports, per seed,
    whether required n_t is non-decreasing in sigma.
    """
    tasks = [(cfg, seed, float(s)) for seed in cfg.seeds for s in cfg.sigma_grid]
    results = _run_tasks(_difficulty_task, tasks, _worker_count(cfg.workers))
    by_key = {(seed, sigma): (req, rows) for seed, sigma, req, rows in results}

    table_rows = []
    cell_rows = []
    monotone = {}
    for seed in cfg.seeds:
        reqs = []
        for sigma in cfg.sigma_grid:
            req, rows = by_key[(seed, float(sigma))]
            cell_rows.extend(rows)
            table_rows.append(
                (seed, float(sigma), req if req is not None else "", int(req is None))
            )
            reqs.append(np.inf if req is None else req)
        monotone[seed] = bool(all(b >= a for a, b in zip(reqs, reqs[1:])))

    mean_rows = []
    for sigma in cfg.sigma_grid:
        vals = [by_key[(seed, float(sigma))][0] for seed in cfg.seeds]
        finite = [v for v in vals if v is not None]
        mean_rows.append(
            (float(sigma), np.mean(finite) if finite else "", len(vals) - len(finite))
        )

    return SweepResult(
        experiment="difficulty-table",
        tables={
            "required": Table(("seed", "sigma_eps", "required_nt", "exceeds_grid"), tuple(table_rows)),
            "mean_required": Table(("sigma_eps", "mean_required_nt", "n_exceeds"), tuple(mean_rows)),
            "cells": Table(("seed", "sigma_eps", "n_t", "e_st", "e_base", "e_t"), tuple(cell_rows)),
        },
        meta={
            "config": config_to_dict(cfg),
            "monotone_by_seed": {str(k): v for k, v in monotone.items()},
            "monotone_seed_count": int(sum(monotone.values())),
        },
    )


# ---------------------------------------------------------------------------
# Teacher knowledge decomposition (pooled feature transfer vs group size)


@dataclass
class DecompositionConfig:
    d_x: int = 100
    m: int = 2000
    sigma_eps: float = 0.3
    g_grid: tuple = (1, 2, 4, 8)
    ns_grid: tuple = (32, 256)
    seeds: tuple = (0, 1, 2, 3, 4)
    epochs: int = 800
    eval_every: int = 50
    mc_eval_samples: int = 4000
    lr: float | None = None
    workers: int | None = None


def _decomposition_task(args):
    cfg, seed, n_s, g = args
    # The teacher's W1 draw ignores g, so the end-to-end teacher function is
    # identical across the g grid; only the pooling seen by the student moves.
    pt = make_relu_teacher(SeededRng(seed).child(1), cfg.d_x, cfg.m, g, sign_split=True)
    teacher = from_pooled_teacher(pt)
    ds = make_regression_dataset(
        SeededRng(seed).child(2).child(n_s), cfg.d_x, 1, n_s, cfg.sigma_eps, teacher.forward
    )
    student = pooled_student(SeededRng(seed).child(3), teacher, cfg.d_x)
    rcfg = ReluTrainConfig(
        lr=cfg.lr, epochs=cfg.epochs, lam=0.0, eval_every=cfg.eval_every,
        mc_eval_samples=cfg.mc_eval_samples, seed=seed,
    )
    _best, final, trace = train_relu(student, teacher, ds, rcfg, "simplified", eval_fn=teacher.forward)
    return (seed, n_s, g, trace.records[-1][3], trace.diagnostics["best_test_error"])


def exp_decomposition(cfg: DecompositionConfig) -> SweepResult:
    """Trained test error against the pooling group size g.

    Reports Spearman rank correlation between g and the final error for each
    (seed, n_s) and for the seed-averaged rows.
    """
    from scipy import stats

    tasks = [
        (cfg, seed, n_s, g)
        for seed in cfg.seeds
        for n_s in cfg.ns_grid
        for g in cfg.g_grid
    ]
    results = _run_tasks(_decomposition_task, tasks, _worker_count(cfg.workers))
    err = {(s, n, g): (final, best) for s, n, g, final, best in results}

    cell_rows = [
        (s, n, g, err[(s, n, g)][0], err[(s, n, g)][1])
        for s in cfg.seeds
        for n in cfg.ns_grid
        for g in cfg.g_grid
    ]

    spearman_rows = []
    per_seed_rho = {}
    for n_s in cfg.ns_grid:
        for seed in cfg.seeds:
            errors = [err[(seed, n_s, g)][0] for g in cfg.g_grid]
            rho = float(stats.spearmanr(cfg.g_grid, errors).statistic)
            spearman_rows.append((seed, n_s, rho))
            per_seed_rho.setdefault(n_s, []).append(rho)

    mean_rows = []
    for n_s in cfg.ns_grid:
        means = [np.mean([err[(s, n_s, g)][0] for s in cfg.seeds]) for g in cfg.g_grid]
        rho = float(stats.spearmanr(cfg.g_grid, means).statistic)
        mean_rows.append((n_s, *means, rho))

    largest = max(cfg.ns_grid)
    return SweepResult(
        experiment="decomposition",
        tables={
            "cells": Table(("seed", "n_s", "g", "err_final", "err_best"), tuple(cell_rows)),
            "spearman": Table(("seed", "n_s", "spearman_g_err"), tuple(spearman_rows)),
            "mean": Table(
                ("n_s", *[f"err_g{g}" for g in cfg.g_grid], "spearman"), tuple(mean_rows)
            ),
        },
        meta={
            "config": config_to_dict(cfg),
            "positive_rho_seeds_at_largest_ns": int(
                sum(r > 0 for r in per_seed_rho[largest])
            ),
        },
    )


# ---------------------------------------------------------------------------
# Sparse transfer vs target-based LASSO as dimension grows


@dataclass
class LassoDivergenceConfig:
    dx_grid: tuple = (500, 1000, 2000, 4000)
    sigma_eps_sq: float = 0.1
    beta_value: float = 1.0
    g: int = 1
    # Per-block transfer penalties, in the normalized objective (1/n on the
    # quadratic); target penalties follow the unnormalized convention.
    st_lam_grid: tuple = (0.05, 0.1, 0.15, 0.25, 0.4, 0.7, 1.2)
    target_lam_grid: tuple = LAMBDA_GRID_DEFAULT
    seeds: tuple = (0,)
    workers: int | None = None


def _lasso_divergence_task(args):
    cfg, seed, d_x = args
    s = d_x // 20
    n_s = int(np.ceil(5.0 * np.log(d_x)))
    sigma = float(np.sqrt(cfg.sigma_eps_sq))
    gt = make_sparse_beta(d_x, s, cfg.beta_value, group_size=cfg.g)
    ds = make_regression_dataset(
        SeededRng(seed).child(d_x), d_x, 1, n_s, sigma, lambda col: gt.beta @ col
    )
    ref = NoisyLinearEval(gt.beta, sigma)
    _opt_beta, opt_err = optimal_noisy_predictor(gt.beta, sigma)

    report = incoherence_check(ds, gt)
    st_best = None
    for lam in cfg.st_lam_grid:
        fit = st_decomposed_fit(ds, gt, lambdas=float(lam), report=report)
        e = linear_test_error(fit.w_total, ref)
        if st_best is None or e < st_best[0]:
            st_best = (e, float(lam))

    tfit = target_lasso_fit(ds, gt, cfg.target_lam_grid, tol=1e-8, max_iters=20_000)
    return (d_x, seed, n_s, st_best[0], st_best[1], tfit.error, tfit.lam, opt_err, report.gamma)


def exp_lasso_divergence(cfg: LassoDivergenceConfig) -> SweepResult:
    """Best-over-lambda transfer error vs target-based error vs the optimum."""
    tasks = [(cfg, seed, d_x) for seed in cfg.seeds for d_x in cfg.dx_grid]
    results = _run_tasks(_lasso_divergence_task, tasks, _worker_count(cfg.workers))
    key = {(d, s): r for r in results for d, s in [(r[0], r[1])]}

    rows = []
    curve_rows = []
    for d_x in cfg.dx_grid:
        st_errs, target_errs, opts = [], [], []
        for seed in cfg.seeds:
            d, s, n_s, st_e, st_l, t_e, t_l, opt, gamma = key[(d_x, seed)]
            rows.append((d, s, n_s, st_e, st_l, t_e, t_l, opt, gamma))
            st_errs.append(st_e)
            target_errs.append(t_e)
            opts.append(opt)
        curve_rows.append(
            (d_x, float(np.mean(st_errs)), float(np.mean(target_errs)), float(np.mean(opts)))
        )

    return SweepResult(
        experiment="lasso-divergence",
        tables={
            "curves": Table(("d_x", "st_error", "target_error", "optimal_error"), tuple(curve_rows)),
            "runs": Table(
                (
                    "d_x", "seed", "n_s", "st_error", "st_lam_best",
                    "target_error", "target_lam_best", "optimal_error", "gamma",
                ),
                tuple(rows),
            ),
        },
        meta={"config": config_to_dict(cfg)},
    )


# ---------------------------------------------------------------------------
# Closed-form oracle comparisons for the linear-network trainers


@dataclass
class TheoremOraclesConfig:
    sigma_eps: float = 0.3
    # over-determined regime (n >= d_x): trained products must match the
    # least-squares oracle for base and every lambda.
    over_d_x: int = 20
    over_d_y: int = 3
    over_m: int = 10
    over_n: int = 60
    lam_grid: tuple = (0.1, 1.0, 10.0)
    # under-determined regime (n < d_x): gap between base- and st-trained
    # products should scale linearly in the initialization size delta.
    under_d_x: int = 30
    under_d_y: int = 2
    under_m: int = 8
    under_n: int = 10
    delta_grid: tuple = (1e-1, 1e-2, 1e-3)
    st_lam: float = 1.0
    seed: int = 0
    max_steps: int = 400_000
    workers: int | None = None


def _interpolating_teacher(wstar: np.ndarray, m: int) -> LinearNetwork:
    """Two-layer factorization [W*; 0], [I 0] of an exact clean interpolator."""
    d_y, d_x = wstar.shape
    w1 = np.zeros((m, d_x))
    w1[:d_y, :] = wstar
    w2 = np.zeros((d_y, m))
    w2[:, :d_y] = np.eye(d_y)
    return LinearNetwork([w1, w2])


def exp_theorem_oracles(cfg: TheoremOraclesConfig) -> SweepResult:
    root = SeededRng(cfg.seed)

    # Over-determined regime with a linear ground truth the teacher can
    # interpolate exactly.
    wstar = root.child(1).generator().normal(0.0, 1.0 / np.sqrt(cfg.over_d_x), (cfg.over_d_y, cfg.over_d_x))
    ds_over = make_regression_dataset(
        root.child(2), cfg.over_d_x, cfg.over_d_y, cfg.over_n, cfg.sigma_eps, lambda c: wstar @ c
    )
    teacher_over = _interpolating_teacher(wstar, cfg.over_m)
    oracle_over = ols_minimizer(ds_over).W
    oracle_norm = np.linalg.norm(oracle_over)

    dims_over = (cfg.over_d_x, cfg.over_m, cfg.over_d_y)
    init_over = init_small_gaussian(root.child(3), dims_over, 0.1)
    over_rows = []
    tcfg = TrainConfig(max_steps=cfg.max_steps, eval_every=10_000)
    net_b, _ = train_gd(init_over, ds_over, None, tcfg)
    over_rows.append(("base", 0.0, float(np.linalg.norm(net_b.product() - oracle_over) / oracle_norm)))
    for lam in cfg.lam_grid:
        scfg = TrainConfig(max_steps=cfg.max_steps, lam=float(lam), eval_every=10_000)
        net_s, _ = train_gd(init_over, ds_over, teacher_over, scfg)
        over_rows.append(
            ("st", float(lam), float(np.linalg.norm(net_s.product() - oracle_over) / oracle_norm))
        )

    # Under-determined regime: clean-interpolating teacher, balanced base
    # init, small-gaussian st init; directions fixed so only delta moves.
    wstar_u = root.child(7).generator().normal(
        0.0, 1.0 / np.sqrt(cfg.under_d_x), (cfg.under_d_y, cfg.under_d_x)
    )
    ds_under = make_regression_dataset(
        root.child(4), cfg.under_d_x, cfg.under_d_y, cfg.under_n, cfg.sigma_eps,
        lambda c: wstar_u @ c,
    )
    dims_under = (cfg.under_d_x, cfg.under_m, cfg.under_d_y)
    p = min(dims_under)
    clean_view = Dataset(
        X=ds_under.X, Z=np.zeros_like(ds_under.X), Xeps=ds_under.X, Y=ds_under.Y,
        sigma_eps=0.0, seed=ds_under.seed,
    )
    teacher_prod = min_norm_minimizer(clean_view, p).W
    teacher_under = _interpolating_teacher(teacher_prod, cfg.under_m)
    oracle_under = min_norm_minimizer(ds_under, p).W

    under_rows = []
    gaps = []
    for delta in cfg.delta_grid:
        base0 = init_balanced(root.child(5), dims_under, float(delta))
        st0 = init_small_gaussian(root.child(6), dims_under, float(delta))
        bcfg = TrainConfig(max_steps=cfg.max_steps, eval_every=10_000)
        scfg = TrainConfig(max_steps=cfg.max_steps, lam=cfg.st_lam, eval_every=10_000)
        net_b, _ = train_gd(base0, ds_under, None, bcfg)
        net_s, _ = train_gd(st0, ds_under, teacher_under, scfg)
        prod_b, prod_s = net_b.product(), net_s.product()
        gap = float(np.linalg.norm(prod_b - prod_s))
        under_rows.append(
            (
                float(delta),
                gap,
                float(np.linalg.norm(prod_b - oracle_under)),
                float(np.linalg.norm(prod_s - oracle_under)),
            )
        )
        gaps.append(gap)

    logs = np.log(np.array(cfg.delta_grid))
    slope = float(np.polyfit(logs, np.log(np.maximum(gaps, 1e-300)), 1)[0])

    return SweepResult(
        experiment="theorem-oracles",
        tables={
            "over": Table(("loss", "lam", "rel_gap_to_ols"), tuple(over_rows)),
            "under": Table(
                ("delta", "base_st_gap", "base_dist_to_minnorm", "st_dist_to_minnorm"),
                tuple(under_rows),
            ),
        },
        meta={"config": config_to_dict(cfg), "loglog_slope": slope},
    )


# ---------------------------------------------------------------------------
# Output emission


EXPERIMENTS = {
    "early-stopping": (EarlyStoppingConfig, exp_early_stopping),
    "regime-grid": (RegimeGridConfig, exp_regime_grid),
    "difficulty-table": (DifficultyTableConfig, exp_difficulty_table),
    "decomposition": (DecompositionConfig, exp_decomposition),
    "lasso-divergence": (LassoDivergenceConfig, exp_lasso_divergence),
    "theorem-oracles": (TheoremOraclesConfig, exp_theorem_oracles),
}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        git = out.stdout.strip() if out.returncode == 0 else "unknown"
    except (OSError, subprocess.SubprocessError):
        git = "unknown"
    return f"stlab-{__version__}+{git}"


def emit_outputs(result, out_dir: str | Path) -> list[Path]:
    """Write CSVs, a manifest, and a plot for a sweep result or regime grid.

    Returns the list of paths written. CSV bytes are a pure function of the
    result content.
    """
    if isinstance(result, RegimeGrid):
        result = result.as_sweep_result()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc

    written = []
    for name, table in result.tables.items():
        path = out_dir / f"{result.experiment}__{name}.csv"
        lines = [",".join(table.columns)]
        for row in table.rows:
            lines.append(",".join(_fmt(v) for v in row))
        try:
            path.write_text("\n".join(lines) + "\n")
        except OSError as exc:
            raise OSError(f"failed writing {path}: {exc}") from exc
        written.append(path)

    manifest = {
        "experiment": result.experiment,
        "meta": result.meta,
        "tables": sorted(result.tables),
        "version": _version_string(),
    }
    cfg_meta = result.meta.get("config")
    if cfg_meta is not None:
        blob = json.dumps(cfg_meta, sort_keys=True).encode()
        manifest["config_sha256"] = hashlib.sha256(blob).hexdigest()
    manifest_path = out_dir / f"{result.experiment}__manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2, default=str) + "\n")
    written.append(manifest_path)

    plot_path = _plot(result, out_dir)
    if plot_path is not None:
        written.append(plot_path)
    return written


def _plot(result: SweepResult, out_dir: Path) -> Path | None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    name = result.experiment
    try:
        if name == "early-stopping" and result.tables["summary"].rows:
            t = result.tables["summary"]
            ns = [r[0] for r in t.rows]
            for idx, label in ((2, "early-stopped ST"), (3, "zero-training-loss ST"), (4, "early-stopped base")):
                ax.plot(ns, [r[idx] for r in t.rows], marker="o", label=label)
            ax.set_xscale("log", base=2)
            ax.set_yscale("log")
            ax.set_xlabel("student samples n_s")
            ax.set_ylabel("test error")
            ax.legend()
        elif name == "regime-grid" and result.tables["cells"].rows:
            for n_t, n_s, e_st, e_base, verdict in result.tables["cells"].rows:
                color, mark = ("tab:green", "o") if verdict else ("tab:red", "x")
                ax.scatter([n_s], [n_t], c=color, marker=mark)
            ax.set_xscale("log", base=2)
            ax.set_yscale("log", base=2)
            ax.set_xlabel("student samples n_s")
            ax.set_ylabel("teacher samples n_t")
        elif name == "difficulty-table" and result.tables["mean_required"].rows:
            t = result.tables["mean_required"]
            xs = [r[0] for r in t.rows if r[1] != ""]
            ys = [r[1] for r in t.rows if r[1] != ""]
            ax.plot(xs, ys, marker="o")
            ax.set_xlabel("input noise sigma")
            ax.set_ylabel("required teacher samples n_t")
        elif name == "decomposition" and result.tables["mean"].rows:
            t = result.tables["mean"]
            g_cols = [c for c in t.columns if c.startswith("err_g")]
            gs = [int(c[5:]) for c in g_cols]
            for row in t.rows:
                ax.plot(gs, row[1 : 1 + len(gs)], marker="o", label=f"n_s={row[0]}")
            ax.set_xlabel("neurons per group g")
            ax.set_ylabel("test error")
            ax.legend()
        elif name == "lasso-divergence" and result.tables["curves"].rows:
            t = result.tables["curves"]
            dx = [r[0] for r in t.rows]
            for idx, label in ((1, "student-teacher"), (2, "target-based"), (3, "optimal")):
                ax.plot(dx, [r[idx] for r in t.rows], marker="o", label=label)
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.set_xlabel("dimension d_x")
            ax.set_ylabel("test error")
            ax.legend()
        elif name == "theorem-oracles" and result.tables["under"].rows:
            t = result.tables["under"]
            ax.plot([r[0] for r in t.rows], [r[1] for r in t.rows], marker="o")
            ax.set_xscale("log")
            ax.set_yscale("log")
            ax.set_xlabel("initialization scale delta")
            ax.set_ylabel("|| base product - st product ||_F")
        else:
            plt.close(fig)
            return None
    except Exception:
        plt.close(fig)
        raise
    path = out_dir / f"{result.experiment}__plot.svg"
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return path

"""Shallow wide ReLU students: losses, SGD training, Monte Carlo evaluation.

Two operating modes. Unpooled nets compute W2 sigma(W1 x) and support the
base loss and the feature-matching loss on the hidden layer. Pooled nets fix
W2 to the teacher's pooled second layer (never trained), compute
W2 P sigma(W1 x), and train W1 against the pooled feature difference only.

The ReLU subgradient at 0 is taken to be 0. Pooling is evaluated by a
reshape-sum rather than multiplying by P, which is equivalent because the
groups are contiguous.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .datagen import Dataset, PooledTeacher, pooling_matrix
from .numerics import NumericsError, SeededRng, gaussian_mat, lambda_max_sym
from .trace import TrainTrace
from .linear_net import TrainingDivergedError, DIVERGENCE_FACTOR, WEIGHT_NORM_CAP


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


@dataclass
class ShallowReluNet:
    """One-hidden-layer ReLU network, optionally with pooled output groups."""

    W1: np.ndarray
    W2: np.ndarray
    P: np.ndarray | None = None
    g: int | None = None
    trainable: str = "both"  # "both" | "w1_only"

    def __post_init__(self):
        m = self.W1.shape[0]
        if self.pooled:
            if m % self.g != 0 or self.W2.shape[1] != m // self.g:
                raise NumericsError(
                    f"pooled net needs W2 with m/g={m}/{self.g} columns, got {self.W2.shape}"
                )
            # The pooled second layer belongs to the teacher and is frozen.
            self.trainable = "w1_only"
        elif self.W2.shape[1] != m:
            raise NumericsError(f"W2 has {self.W2.shape[1]} columns for m={m} hidden units")

    @property
    def pooled(self) -> bool:
        return self.g is not None

    @property
    def m(self) -> int:
        return self.W1.shape[0]

    def hidden(self, x: np.ndarray) -> np.ndarray:
        return relu(self.W1 @ x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x2 = x[:, None] if x.ndim == 1 else x
        h = self.hidden(x2)
        out = self.W2 @ _pool(h, self.g) if self.pooled else self.W2 @ h
        return out[:, 0] if x.ndim == 1 else out

    def copy(self) -> "ShallowReluNet":
        return ShallowReluNet(
            self.W1.copy(), self.W2.copy(),
            None if self.P is None else self.P.copy(), self.g, self.trainable,
        )


def _pool(h: np.ndarray, g: int) -> np.ndarray:
    m, n = h.shape
    return h.reshape(m // g, g, n).sum(axis=1)


def _unpool(v: np.ndarray, g: int) -> np.ndarray:
    return np.repeat(v, g, axis=0)


def xavier_net(rng: SeededRng, d_x: int, m: int, d_y: int = 1) -> ShallowReluNet:
    """W1 ~ N(0, 2/(d_x+m)), W2 ~ N(0, 2/(d_y+m)) -- the wide-net teacher recipe."""
    w1 = gaussian_mat(rng.child(0), m, d_x, np.sqrt(2.0 / (d_x + m)))
    w2 = gaussian_mat(rng.child(1), d_y, m, np.sqrt(2.0 / (d_y + m)))
    return ShallowReluNet(w1, w2)


def from_pooled_teacher(pt: PooledTeacher) -> ShallowReluNet:
    return ShallowReluNet(pt.W1.copy(), pt.W2.copy(), pt.P.copy(), pt.g)


def pooled_student(rng: SeededRng, teacher: ShallowReluNet, d_x: int) -> ShallowReluNet:
    """Fresh Xavier W1 under the teacher's frozen pooled second layer."""
    if not teacher.pooled:
        raise NumericsError("pooled_student requires a pooled teacher")
    m = teacher.m
    w1 = gaussian_mat(rng, m, d_x, np.sqrt(2.0 / (d_x + m)))
    return ShallowReluNet(w1, teacher.W2.copy(), pooling_matrix(m, teacher.g), teacher.g)


def relu_forward(net: ShallowReluNet, x: np.ndarray) -> np.ndarray:
    """W2 sigma(W1 x), or W2 P sigma(W1 x) in pooled mode."""
    return net.forward(x)


def base_relu_loss(net: ShallowReluNet, ds: Dataset) -> float:
    resid = net.forward(ds.Xeps) - ds.Y
    return float(np.sum(resid * resid))


def feature_st_loss(net: ShallowReluNet, teacher: ShallowReluNet, ds: Dataset, lam: float) -> float:
    """Base loss plus lam * sum_i ||sigma(W1 xeps_i) - sigma(Wt1 x_i)||^2."""
    if net.m != teacher.m:
        raise NumericsError(f"student m={net.m} != teacher m={teacher.m}")
    gap = net.hidden(ds.Xeps) - teacher.hidden(ds.X)
    return base_relu_loss(net, ds) + lam * float(np.sum(gap * gap))


def simplified_st_loss(net: ShallowReluNet, teacher: ShallowReluNet, ds: Dataset) -> float:
    """Pooled feature difference only; no target term."""
    if not (net.pooled and teacher.pooled) or net.g != teacher.g:
        raise NumericsError("simplified loss needs pooled student and teacher with equal g")
    gap = _pool(net.hidden(ds.Xeps) - teacher.hidden(ds.X), net.g)
    return float(np.sum(gap * gap))


def _grads(
    net: ShallowReluNet,
    teacher: ShallowReluNet | None,
    xeps: np.ndarray,
    x_clean: np.ndarray,
    y: np.ndarray,
    lam: float,
    loss_kind: str,
):
    """Analytic gradients (dW1, dW2 or None) for one batch."""
    z = net.W1 @ xeps
    h = relu(z)
    mask = (z > 0.0).astype(np.float64)

    if loss_kind == "simplified":
        gap = _pool(h - teacher.hidden(x_clean), net.g)
        d_w1 = 2.0 * ((_unpool(gap, net.g) * mask) @ xeps.T)
        return d_w1, None

    resid = (net.W2 @ _pool(h, net.g) if net.pooled else net.W2 @ h) - y
    if net.pooled:
        back = _unpool(net.W2.T @ resid, net.g)
    else:
        back = net.W2.T @ resid
    d_w1 = 2.0 * ((back * mask) @ xeps.T)
    d_w2 = None
    if net.trainable == "both":
        d_w2 = 2.0 * (resid @ (_pool(h, net.g) if net.pooled else h).T)

    if loss_kind == "st":
        gap = h - teacher.hidden(x_clean)
        d_w1 += 2.0 * lam * ((gap * mask) @ xeps.T)
    return d_w1, d_w2


def batch_loss(
    net: ShallowReluNet, teacher: ShallowReluNet | None, ds: Dataset, lam: float, loss_kind: str
) -> float:
    if loss_kind == "base":
        return base_relu_loss(net, ds)
    if loss_kind == "st":
        return feature_st_loss(net, teacher, ds, lam)
    if loss_kind == "simplified":
        return simplified_st_loss(net, teacher, ds)
    raise NumericsError(f"unknown loss_kind {loss_kind!r}")


@dataclass
class ReluTrainConfig:
    lr: float | None = None
    epochs: int = 2000
    lam: float = 1.0
    batch: str | int = "full"  # "full" or a minibatch size
    eval_every: int = 50
    mc_eval_samples: int = 4000
    seed: int = 0

    def __post_init__(self):
        if self.mc_eval_samples < 1000:
            raise NumericsError("mc_eval_samples must be >= 1000 for reported errors")


class McError(NamedTuple):
    value: float
    stderr: float


def mc_test_error(
    net: ShallowReluNet,
    reference,
    sigma_eps: float,
    n_samples: int,
    seed: int,
) -> McError:
    """Monte Carlo E ||net(x+eps) - reference(x)||^2 on fresh draws.

    ``reference`` is a callable on clean column batches, or any object with
    a ``forward`` method (another net). Deterministic per seed.
    """
    if n_samples < 1:
        raise NumericsError("n_samples must be >= 1")
    ref_fn = reference.forward if hasattr(reference, "forward") else reference
    d_x = net.W1.shape[1]
    gen = np.random.default_rng(seed)
    sq = np.empty(n_samples)
    done = 0
    while done < n_samples:
        n = min(20_000, n_samples - done)
        x = gen.standard_normal((d_x, n))
        eps = sigma_eps * gen.standard_normal((d_x, n))
        gap = np.atleast_2d(net.forward(x + eps)) - np.atleast_2d(ref_fn(x))
        sq[done : done + n] = np.sum(gap * gap, axis=0)
        done += n
    value = float(sq.mean())
    stderr = float(sq.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("nan")
    return McError(value, stderr)


def _auto_relu_lr(net: ShallowReluNet, ds: Dataset, lam: float, loss_kind: str) -> float:
    # The W1 curvature is bounded by 2 * c * lambda_max(Xeps Xeps^T), where c
    # is the operator norm of whatever sits on top of the hidden layer:
    # ||W2||^2 for the base term (g * ||W2||^2 expanded through pooling),
    # plus lam from the feature term, or just g for the pooled feature loss.
    lam_max = lambda_max_sym(ds.Xeps @ ds.Xeps.T)
    if loss_kind == "simplified":
        top = float(net.g)
    else:
        w2_sq = float(np.sum(net.W2 * net.W2)) * (net.g if net.pooled else 1.0)
        top = w2_sq + (lam if loss_kind == "st" else 0.0)
    return 0.45 / (2.0 * max(top, 1e-12) * max(lam_max, 1e-12))


def train_relu(
    net: ShallowReluNet,
    teacher: ShallowReluNet | None,
    ds: Dataset,
    cfg: ReluTrainConfig,
    loss_kind: str,
    eval_fn: Callable | None = None,
) -> tuple[ShallowReluNet, ShallowReluNet, TrainTrace]:
    """Gradient-descent training with oracle early stopping.

    Every ``eval_every`` steps the true test error is estimated by Monte
    Carlo on a fixed evaluation set drawn from cfg.seed; the snapshot with
    the best estimate is returned alongside the final iterate. ``eval_fn``
    is the ground-truth predictor on clean inputs (defaults to the teacher).
    """
    if loss_kind in ("st", "simplified") and teacher is None:
        raise NumericsError(f"loss_kind {loss_kind!r} requires a teacher")
    net = net.copy()
    reference = eval_fn if eval_fn is not None else teacher
    eval_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0xE7A1,)))
    if reference is not None:
        ref_fn = reference.forward if hasattr(reference, "forward") else reference
        x_eval = eval_rng.standard_normal((ds.d_x, cfg.mc_eval_samples))
        eps_eval = ds.sigma_eps * eval_rng.standard_normal((ds.d_x, cfg.mc_eval_samples))
        ref_eval = np.atleast_2d(ref_fn(x_eval))

        def measure(n: ShallowReluNet) -> float:
            gap = np.atleast_2d(n.forward(x_eval + eps_eval)) - ref_eval
            return float(np.sum(gap * gap, axis=0).mean())

    else:

        def measure(n: ShallowReluNet) -> float:
            return float("nan")

    lr = cfg.lr if cfg.lr is not None else _auto_relu_lr(net, ds, cfg.lam, loss_kind)
    batch_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0xB47C,)))
    full_batch = cfg.batch == "full"
    if not full_batch and not (isinstance(cfg.batch, int) and 1 <= cfg.batch):
        raise NumericsError(f"batch must be 'full' or a positive int, got {cfg.batch!r}")

    trace = TrainTrace()
    trace.diagnostics["lr"] = lr
    init_loss = max(batch_loss(net, teacher, ds, cfg.lam, loss_kind), 1e-300)

    def evaluate(step: int):
        err = measure(net)
        full = batch_loss(net, teacher, ds, cfg.lam, loss_kind)
        bl = base_relu_loss(net, ds)
        if not np.isfinite(full) or full > DIVERGENCE_FACTOR * init_loss:
            raise TrainingDivergedError(step, full)
        if max(np.abs(net.W1).max(), np.abs(net.W2).max()) > WEIGHT_NORM_CAP:
            raise TrainingDivergedError(step, full, "weight norm exceeded cap")
        trace.add(step, bl, full, err, float("nan"))
        return err

    best_err = evaluate(0)
    best_net = net.copy()
    step = 0
    for _epoch in range(cfg.epochs):
        if full_batch:
            batches = [slice(None)]
        else:
            perm = batch_rng.permutation(ds.n_samples)
            batches = [perm[i : i + cfg.batch] for i in range(0, ds.n_samples, cfg.batch)]
        for sel in batches:
            d_w1, d_w2 = _grads(
                net, teacher, ds.Xeps[:, sel], ds.X[:, sel], ds.Y[:, sel], cfg.lam, loss_kind
            )
            net.W1 -= lr * d_w1
            if d_w2 is not None:
                net.W2 -= lr * d_w2
            step += 1
            if step % cfg.eval_every == 0:
                err = evaluate(step)
                if reference is not None and err < best_err:
                    best_err = err
                    best_net = net.copy()

    if trace.records[-1][0] != step:
        err = evaluate(step)
        if reference is not None and err < best_err:
            best_err = err
            best_net = net.copy()
    if reference is None:
        best_net = net.copy()
    trace.diagnostics["best_test_error"] = best_err
    return best_net, net, trace

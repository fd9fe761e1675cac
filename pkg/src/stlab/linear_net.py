"""Deep linear networks: losses, analytic gradients, and a batch GD trainer.

The activation is the identity throughout this module. Gradient flow is
approximated by full-batch gradient descent with a step size kept below the
stability threshold of the quadratic term (estimated per run by power
iteration); a halving safeguard enforces monotone descent, so a too-large
requested step degrades gracefully instead of diverging.

The feature-matching (student-teacher) loss compares the student's layer-i*
features on *noisy* inputs with the teacher's features on *clean* inputs:
base + lambda * ||W_{i*:1} Xeps - Wt_{i*:1} X||_F^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import Dataset
from .numerics import NumericsError, SeededRng, gaussian_mat, lambda_max_sym
from .oracles import NoisyLinearEval, linear_test_error
from .trace import TrainTrace

WEIGHT_NORM_CAP = 1e6
DIVERGENCE_FACTOR = 1e6


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, loss: float, message: str = "loss diverged"):
        super().__init__(f"{message} at step {step}: loss={loss:.6e}")
        self.step = step
        self.loss = loss


@dataclass
class LinearNetwork:
    """Ordered weight stack W_1..W_L with W_i of shape (d_i, d_{i-1})."""

    layers: list[np.ndarray]

    def __post_init__(self):
        if len(self.layers) < 2:
            raise NumericsError(f"need L >= 2 layers, got {len(self.layers)}")
        for i in range(1, len(self.layers)):
            if self.layers[i].shape[1] != self.layers[i - 1].shape[0]:
                raise NumericsError(
                    f"layer {i + 1} shape {self.layers[i].shape} does not compose with "
                    f"layer {i} shape {self.layers[i - 1].shape}"
                )

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.layers[0].shape[1],) + tuple(w.shape[0] for w in self.layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def product(self, upto: int | None = None) -> np.ndarray:
        """W_upto ... W_1 (full product W_L ... W_1 by default)."""
        upto = self.depth if upto is None else upto
        out = self.layers[0]
        for w in self.layers[1:upto]:
            out = w @ out
        return out

    def copy(self) -> "LinearNetwork":
        return LinearNetwork([w.copy() for w in self.layers])


@dataclass
class TrainConfig:
    """Full-batch GD settings.

    ``lr=None`` picks a step size from the per-run stability estimate.
    ``grad_tol=None`` resolves to 1e-9 * (1 + ||Y||_F). ``init`` is either
    "balanced" or "small-gaussian", with scale ``delta``.
    """

    lr: float | None = None
    max_steps: int = 200_000
    grad_tol: float | None = None
    lam: float = 0.0
    split_layer: int = 1
    init: str = "balanced"
    delta: float = 1e-2
    eval_every: int = 1000


def _check_shapes(net: LinearNetwork, ds: Dataset):
    dims = net.dims
    if dims[0] != ds.d_x or dims[-1] != ds.d_y:
        raise NumericsError(
            f"network maps {dims[0]} -> {dims[-1]}, dataset has d_x={ds.d_x}, d_y={ds.d_y}"
        )


def base_loss(net: LinearNetwork, ds: Dataset) -> float:
    """Sum over samples of ||W_L...W_1 (x_i + eps_i) - y_i||^2."""
    _check_shapes(net, ds)
    resid = net.product() @ ds.Xeps - ds.Y
    return float(np.sum(resid * resid))


def st_loss(
    net: LinearNetwork, teacher: LinearNetwork, ds: Dataset, lam: float, split_layer: int = 1
) -> float:
    """Base loss plus lambda times the layer-i* feature gap (noisy vs clean)."""
    _check_shapes(net, ds)
    if not 1 <= split_layer <= net.depth - 1:
        raise NumericsError(f"split_layer must be in [1, {net.depth - 1}], got {split_layer}")
    if teacher.dims != net.dims:
        raise NumericsError(f"teacher dims {teacher.dims} != student dims {net.dims}")
    feat = net.product(split_layer) @ ds.Xeps - teacher.product(split_layer) @ ds.X
    return base_loss(net, ds) + lam * float(np.sum(feat * feat))


def grad_base(net: LinearNetwork, ds: Dataset) -> list[np.ndarray]:
    """Analytic gradient of :func:`base_loss` with respect to every layer."""
    _check_shapes(net, ds)
    acts = [ds.Xeps]  # acts[i] is the input reaching layer i+1
    for w in net.layers[:-1]:
        acts.append(w @ acts[-1])
    resid = net.layers[-1] @ acts[-1] - ds.Y
    grads: list[np.ndarray] = []
    back = 2.0 * resid
    for i in range(net.depth - 1, -1, -1):
        grads.append(back @ acts[i].T)
        if i > 0:
            back = net.layers[i].T @ back
    grads.reverse()
    return grads


def grad_st(
    net: LinearNetwork, teacher: LinearNetwork, ds: Dataset, lam: float, split_layer: int = 1
) -> list[np.ndarray]:
    """Analytic gradient of :func:`st_loss`; the feature term touches layers 1..i* only."""
    grads = grad_base(net, ds)
    if lam == 0.0:
        return grads
    if not 1 <= split_layer <= net.depth - 1:
        raise NumericsError(f"split_layer must be in [1, {net.depth - 1}], got {split_layer}")
    acts = [ds.Xeps]
    for w in net.layers[:split_layer]:
        acts.append(w @ acts[-1])
    feat = acts[split_layer] - teacher.product(split_layer) @ ds.X
    back = 2.0 * lam * feat
    for i in range(split_layer - 1, -1, -1):
        grads[i] = grads[i] + back @ acts[i].T
        if i > 0:
            back = net.layers[i].T @ back
    return grads


def init_small_gaussian(rng: SeededRng, dims: tuple[int, ...], delta: float) -> LinearNetwork:
    """iid Gaussian layers, each rescaled to Frobenius norm exactly ``delta``."""
    if delta <= 0:
        raise NumericsError(f"delta must be > 0, got {delta}")
    layers = []
    for i in range(1, len(dims)):
        w = gaussian_mat(rng.child(i), dims[i], dims[i - 1], 1.0)
        w *= delta / np.linalg.norm(w)
        layers.append(w)
    return LinearNetwork(layers)


def init_balanced(rng: SeededRng, dims: tuple[int, ...], delta: float) -> LinearNetwork:
    """Two-layer balanced initialization: W2(0)^T W2(0) = W1(0) W1(0)^T.

    Built from the thin SVD of a Gaussian seed matrix G = U S V^T as
    W1 = S^{1/2} V^T (zero-padded to d1 rows), W2 = U S^{1/2} (zero-padded),
    then rescaled so max_i ||W_i||_F = delta. Scaling both layers by the same
    factor preserves balancedness; the output is linear in delta for a fixed
    rng, which keeps delta-sweeps noise-free.
    """
    if len(dims) != 3:
        raise NumericsError("balanced initialization is only defined for L = 2")
    if delta <= 0:
        raise NumericsError(f"delta must be > 0, got {delta}")
    d_x, d_1, d_y = dims
    g = gaussian_mat(rng.child(0), d_y, d_x, 1.0)
    u, s, vt = np.linalg.svd(g, full_matrices=False)
    r = min(len(s), d_1)
    root = np.sqrt(s[:r])
    w1 = np.zeros((d_1, d_x))
    w1[:r, :] = root[:, None] * vt[:r, :]
    w2 = np.zeros((d_y, d_1))
    w2[:, :r] = u[:, :r] * root[None, :]
    scale = delta / max(np.linalg.norm(w1), np.linalg.norm(w2))
    return LinearNetwork([w1 * scale, w2 * scale])


def initialize(rng: SeededRng, dims: tuple[int, ...], cfg: TrainConfig) -> LinearNetwork:
    if cfg.init == "balanced":
        return init_balanced(rng, dims, cfg.delta)
    if cfg.init == "small-gaussian":
        return init_small_gaussian(rng, dims, cfg.delta)
    raise NumericsError(f"unknown init {cfg.init!r}; expected 'balanced' or 'small-gaussian'")


def _auto_lr(net: LinearNetwork, ds: Dataset, lam: float, lam_max: float) -> float:
    # Curvature on W1 scales with ||W2||^2 + lam (times the data Gram); bound
    # ||W2(infty)||^2 by sqrt(p) * ||min-norm fit|| as in the balanced analysis.
    p = min(net.dims)
    fit, *_ = np.linalg.lstsq(ds.Xeps.T, ds.Y.T, rcond=None)
    w2_sq = max(1.0, np.sqrt(p) * float(np.linalg.norm(fit)))
    cur_sq = max((float(np.linalg.norm(w)) ** 2 for w in net.layers), default=1.0)
    return 0.45 / (2.0 * (lam + max(w2_sq, cur_sq)) * max(lam_max, 1e-12))


def train_gd(
    net: LinearNetwork,
    ds: Dataset,
    teacher: LinearNetwork | None,
    cfg: TrainConfig,
    eval_ref: NoisyLinearEval | None = None,
) -> tuple[LinearNetwork, TrainTrace]:
    """Full-batch gradient descent on the base loss (teacher=None) or ST loss.

    Stops when ||grad||_F < grad_tol or after max_steps. Raises
    TrainingDivergedError if the loss blows past 1e6x its initial value or a
    weight norm passes 1e6. Returns the trained network and the trace.
    """
    net = net.copy()
    _check_shapes(net, ds)
    lam = cfg.lam if teacher is not None else 0.0

    def loss_fn(n: LinearNetwork) -> float:
        if teacher is None:
            return base_loss(n, ds)
        return st_loss(n, teacher, ds, lam, cfg.split_layer)

    def grad_fn(n: LinearNetwork) -> list[np.ndarray]:
        if teacher is None:
            return grad_base(n, ds)
        return grad_st(n, teacher, ds, lam, cfg.split_layer)

    lam_max = lambda_max_sym(ds.Xeps @ ds.Xeps.T)
    auto_lr = cfg.lr is None
    lr = _auto_lr(net, ds, lam, lam_max) if auto_lr else cfg.lr
    grad_tol = cfg.grad_tol if cfg.grad_tol is not None else 1e-9 * (1.0 + np.linalg.norm(ds.Y))

    trace = TrainTrace()
    trace.diagnostics["stability"] = lr * lam_max
    trace.diagnostics["lr"] = lr
    trace.diagnostics["lr_halvings"] = 0

    loss = loss_fn(net)
    init_loss = max(loss, 1e-300)
    grads = grad_fn(net)
    gnorm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))

    def record(step):
        test = linear_test_error(net.product(), eval_ref) if eval_ref is not None else float("nan")
        bl = loss if teacher is None else base_loss(net, ds)
        trace.add(step, bl, loss, test, gnorm)

    record(0)
    step = 0
    converged = gnorm < grad_tol
    while not converged and step < cfg.max_steps:
        step += 1
        proposal = [w - lr * g for w, g in zip(net.layers, grads)]
        new_net = LinearNetwork(proposal)
        new_loss = loss_fn(new_net)
        overshoot = not np.isfinite(new_loss) or new_loss > loss * (1.0 + 1e-12) + 1e-300
        if overshoot and auto_lr:
            # Auto step size overshot: halve and retry without advancing.
            lr *= 0.5
            trace.diagnostics["lr_halvings"] += 1
            if trace.diagnostics["lr_halvings"] > 200:
                raise TrainingDivergedError(step, new_loss, "step size collapsed")
            step -= 1
            continue
        if not np.isfinite(new_loss):
            raise TrainingDivergedError(step, new_loss)
        net, loss = new_net, new_loss
        if loss > DIVERGENCE_FACTOR * init_loss:
            raise TrainingDivergedError(step, loss)
        if any(np.linalg.norm(w) > WEIGHT_NORM_CAP for w in net.layers):
            raise TrainingDivergedError(step, loss, "weight norm exceeded cap")
        grads = grad_fn(net)
        gnorm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
        converged = gnorm < grad_tol
        if step % cfg.eval_every == 0 or converged or step == cfg.max_steps:
            record(step)

    if trace.records[-1][0] != step:
        record(step)
    trace.diagnostics["converged"] = bool(converged)
    trace.diagnostics["final_lr"] = lr
    return net, trace


def save_network(net: LinearNetwork, base) -> None:
    from . import container

    meta = {"kind": "linear-network", "dims": list(net.dims)}
    container.save_arrays(base, {f"W{i + 1}": w for i, w in enumerate(net.layers)}, meta)


def load_network(base) -> LinearNetwork:
    from . import container

    arrays, meta = container.load_arrays(base)
    if meta.get("kind") != "linear-network":
        raise ValueError(f"container at {base} is not a linear network")
    layers = [arrays[f"W{i + 1}"] for i in range(len(arrays))]
    return LinearNetwork(layers)

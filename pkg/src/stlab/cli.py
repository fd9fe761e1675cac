"""Command-line entry point binding JSON configs to the library.

Subcommands: synth, train-linear, train-relu, lasso, oracle, exp. Every
subcommand reads an optional JSON config (--config), applies --set key=value
overrides on top, and is deterministic given (config, seed). Exit codes:
0 success, 2 configuration/usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datagen, experiments, lasso, linear_net, oracles, relu_net
from .experiments import ConfigError, config_from_dict
from .numerics import SeededRng


@dataclass
class SynthConfig:
    d_x: int = 20
    d_y: int = 1
    n_samples: int = 50
    sigma_eps: float = 0.5
    seed: int = 0
    target: str = "linear-sparse"  # or "relu-teacher"
    s: int = 5
    beta_value: float = 1.0
    teacher_m: int = 64


@dataclass
class TrainLinearConfig:
    d_x: int = 20
    d_y: int = 2
    hidden: int = 8
    n_samples: int = 50
    sigma_eps: float = 0.3
    seed: int = 0
    lam: float = 0.0  # > 0 trains the student-teacher loss
    delta: float = 0.01
    init: str = "balanced"
    max_steps: int = 200_000
    eval_every: int = 5000
    lr: float | None = None


@dataclass
class TrainReluConfig:
    d_x: int = 50
    m: int = 2000
    n_samples: int = 32
    sigma_eps: float = 0.5
    seed: int = 0
    loss: str = "st"  # base | st | simplified
    lam: float = 1.0
    g: int = 1
    epochs: int = 1000
    eval_every: int = 50
    mc_eval_samples: int = 4000
    lr: float | None = None


@dataclass
class LassoCliConfig:
    d_x: int = 100
    s: int = 5
    g: int = 1
    beta_value: float = 1.0
    n_samples: int = 50
    sigma_eps: float = 0.3
    seed: int = 0
    mode: str = "decomposed"  # decomposed | target
    lambdas: str | float = "auto"
    lambda_grid: tuple = (0.01, 0.1, 1.0, 10.0)


@dataclass
class OracleCliConfig:
    d_x: int = 20
    d_y: int = 2
    n_samples: int = 50
    sigma_eps: float = 0.3
    seed: int = 0
    which: str = "ols"  # ols | min-norm | optimal-predictor
    hidden: int = 8
    s: int = 5
    beta_value: float = 1.0


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _load_config(cls, args) -> object:
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    for text in args.set or []:
        key, value = _parse_override(text)
        data[key] = value
    if args.seed is not None:
        if "seeds" in {f.name for f in cls.__dataclass_fields__.values()}:
            data["seeds"] = [args.seed]
        else:
            data["seed"] = args.seed
    return config_from_dict(cls, data)


def _out_dir(args) -> Path:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _linear_target(cfg_seed: int, d_x: int, d_y: int):
    wstar = SeededRng(cfg_seed).child(900).generator().normal(
        0.0, 1.0 / np.sqrt(d_x), (d_y, d_x)
    )
    return wstar, (lambda c: wstar @ c)


def _cmd_synth(args) -> int:
    cfg = _load_config(SynthConfig, args)
    out = _out_dir(args)
    rng = SeededRng(cfg.seed)
    if cfg.target == "linear-sparse":
        gt = datagen.make_sparse_beta(cfg.d_x, cfg.s, cfg.beta_value)
        target = lambda c: np.atleast_1d(gt.beta @ c)
    elif cfg.target == "relu-teacher":
        teacher = relu_net.xavier_net(rng.child(1), cfg.d_x, cfg.teacher_m, cfg.d_y)
        target = teacher.forward
    else:
        raise ConfigError(
            f"unknown target {cfg.target!r}; valid: linear-sparse, relu-teacher"
        )
    ds = datagen.make_regression_dataset(
        rng, cfg.d_x, cfg.d_y, cfg.n_samples, cfg.sigma_eps, target
    )
    datagen.save_dataset(ds, out / "dataset")
    print(f"wrote {out / 'dataset'}.bin/.json")
    return 0


def _cmd_train_linear(args) -> int:
    cfg = _load_config(TrainLinearConfig, args)
    out = _out_dir(args)
    rng = SeededRng(cfg.seed)
    wstar, target = _linear_target(cfg.seed, cfg.d_x, cfg.d_y)
    ds = datagen.make_regression_dataset(
        rng, cfg.d_x, cfg.d_y, cfg.n_samples, cfg.sigma_eps, target
    )
    dims = (cfg.d_x, cfg.hidden, cfg.d_y)
    tcfg = linear_net.TrainConfig(
        lr=cfg.lr, max_steps=cfg.max_steps, lam=cfg.lam,
        init=cfg.init, delta=cfg.delta, eval_every=cfg.eval_every,
    )
    net0 = linear_net.initialize(rng.child(1), dims, tcfg)
    teacher = None
    if cfg.lam > 0:
        w1 = np.zeros((cfg.hidden, cfg.d_x))
        w1[: cfg.d_y] = wstar
        w2 = np.zeros((cfg.d_y, cfg.hidden))
        w2[:, : cfg.d_y] = np.eye(cfg.d_y)
        teacher = linear_net.LinearNetwork([w1, w2])
    ref = oracles.NoisyLinearEval(wstar, cfg.sigma_eps)
    net, trace = linear_net.train_gd(net0, ds, teacher, tcfg, eval_ref=ref)
    linear_net.save_network(net, out / "network")
    trace.to_csv(out / "trace.csv")
    print(f"final test error {trace.records[-1][3]:.6g}; wrote {out / 'network'}.bin, {out / 'trace.csv'}")
    return 0


def _cmd_train_relu(args) -> int:
    cfg = _load_config(TrainReluConfig, args)
    out = _out_dir(args)
    rng = SeededRng(cfg.seed)
    if cfg.loss == "simplified":
        pt = datagen.make_relu_teacher(rng.child(1), cfg.d_x, cfg.m, cfg.g, sign_split=True)
        teacher = relu_net.from_pooled_teacher(pt)
        student = relu_net.pooled_student(rng.child(2), teacher, cfg.d_x)
    else:
        teacher = relu_net.xavier_net(rng.child(1), cfg.d_x, cfg.m)
        student = relu_net.xavier_net(rng.child(2), cfg.d_x, cfg.m)
    ds = datagen.make_regression_dataset(
        rng, cfg.d_x, 1, cfg.n_samples, cfg.sigma_eps, teacher.forward
    )
    rcfg = relu_net.ReluTrainConfig(
        lr=cfg.lr, epochs=cfg.epochs, lam=cfg.lam, eval_every=cfg.eval_every,
        mc_eval_samples=cfg.mc_eval_samples, seed=cfg.seed,
    )
    use_teacher = None if cfg.loss == "base" else teacher
    best, final, trace = relu_net.train_relu(
        student, use_teacher, ds, rcfg, cfg.loss, eval_fn=teacher.forward
    )
    trace.to_csv(out / "trace.csv")
    np.savez(out / "weights.npz", W1_best=best.W1, W2_best=best.W2, W1_final=final.W1, W2_final=final.W2)
    print(
        f"best test error {trace.diagnostics['best_test_error']:.6g}, "
        f"final {trace.records[-1][3]:.6g}; wrote {out / 'trace.csv'}, {out / 'weights.npz'}"
    )
    return 0


def _cmd_lasso(args) -> int:
    cfg = _load_config(LassoCliConfig, args)
    out = _out_dir(args)
    gt = datagen.make_sparse_beta(cfg.d_x, cfg.s, cfg.beta_value, group_size=cfg.g)
    ds = datagen.make_regression_dataset(
        SeededRng(cfg.seed), cfg.d_x, 1, cfg.n_samples, cfg.sigma_eps,
        lambda c: np.atleast_1d(gt.beta @ c),
    )
    ref = oracles.NoisyLinearEval(gt.beta, cfg.sigma_eps)
    if cfg.mode == "decomposed":
        fit = lasso.st_decomposed_fit(ds, gt, lambdas=cfg.lambdas)
        w = fit.w_total
        diag = {
            "gamma": fit.diagnostics.gamma,
            "lambda_min": fit.diagnostics.lambda_min,
            "k_x": fit.diagnostics.k_x,
            "lambdas": fit.lambdas,
            "supports": [s.tolist() for s in fit.supports],
            "test_error": oracles.linear_test_error(w, ref),
        }
    elif cfg.mode == "target":
        tfit = lasso.target_lasso_fit(ds, gt, cfg.lambda_grid)
        w = tfit.w
        diag = {"lambda_best": tfit.lam, "test_error": tfit.error}
    else:
        raise ConfigError(f"unknown mode {cfg.mode!r}; valid: decomposed, target")
    lines = ["index,beta_star,w"]
    for i in range(cfg.d_x):
        lines.append(f"{i},{gt.beta[i]!r},{w[i]!r}")
    (out / "fit.csv").write_text("\n".join(lines) + "\n")
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n")
    print(f"test error {diag['test_error']:.6g}; wrote {out / 'fit.csv'}, {out / 'diagnostics.json'}")
    return 0


def _cmd_oracle(args) -> int:
    cfg = _load_config(OracleCliConfig, args)
    out = _out_dir(args)
    if cfg.which == "optimal-predictor":
        gt = datagen.make_sparse_beta(cfg.d_x, cfg.s, cfg.beta_value)
        beta, err = oracles.optimal_noisy_predictor(gt.beta, cfg.sigma_eps)
        payload = {"which": cfg.which, "optimal_error": err, "beta": beta.tolist()}
    else:
        wstar, target = _linear_target(cfg.seed, cfg.d_x, cfg.d_y)
        ds = datagen.make_regression_dataset(
            SeededRng(cfg.seed), cfg.d_x, cfg.d_y, cfg.n_samples, cfg.sigma_eps, target
        )
        if cfg.which == "ols":
            sol = oracles.ols_minimizer(ds)
        elif cfg.which == "min-norm":
            p = min(cfg.d_x, cfg.hidden, cfg.d_y)
            sol = oracles.min_norm_minimizer(ds, p)
        else:
            raise ConfigError(
                f"unknown oracle {cfg.which!r}; valid: ols, min-norm, optimal-predictor"
            )
        payload = {"which": cfg.which, "cond": sol.cond, "W": sol.W.tolist()}
    (out / "oracle.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'oracle.json'}")
    return 0


def _cmd_exp(args) -> int:
    if args.experiment not in experiments.EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {args.experiment!r}; valid: {sorted(experiments.EXPERIMENTS)}"
        )
    cfg_cls, runner = experiments.EXPERIMENTS[args.experiment]
    cfg = _load_config(cfg_cls, args)
    result = runner(cfg)
    written = experiments.emit_outputs(result, _out_dir(args))
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stlab",
        description="Student-teacher learning laboratory: synthetic data, trainers, oracles, experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument(
            "--set", action="append", metavar="KEY=VALUE",
            help="config override (JSON-parsed value); repeatable",
        )

    add_common(sub.add_parser("synth", help="generate and save a synthetic dataset"))
    add_common(sub.add_parser("train-linear", help="train a deep linear network"))
    add_common(sub.add_parser("train-relu", help="train a shallow ReLU network"))
    add_common(sub.add_parser("lasso", help="run decomposed or target-based LASSO transfer"))
    add_common(sub.add_parser("oracle", help="compute a closed-form minimizer"))
    exp = sub.add_parser("exp", help="run a named experiment")
    exp.add_argument("experiment", help=f"one of: {', '.join(sorted(experiments.EXPERIMENTS))}")
    add_common(exp)
    return parser


_COMMANDS = {
    "synth": _cmd_synth,
    "train-linear": _cmd_train_linear,
    "train-relu": _cmd_train_relu,
    "lasso": _cmd_lasso,
    "oracle": _cmd_oracle,
    "exp": _cmd_exp,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report, nonzero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())

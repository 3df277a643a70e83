"""Command-line entry point: ``kale <command> [options]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .convolved import CLOSED_FORM, MONTE_CARLO
from .designs import grid_design, halton, maximin_lhd, write_design_csv
from .estimate import PSEUDO, SK_LIKELIHOOD, EstimationProblem, fit, model_from_fit
from .experiments import ExperimentFailed, run_bounds, run_example1, run_example2
from .kernels import GAUSSIAN, MATERN, KernelSpec
from .numerics import RngStream
from .predict import KALE, KALEN, SK, MEAN_BASES, predict_batch
from .serialization import (
    ParseError,
    VersionMismatch,
    default_config,
    load_model,
    read_config,
    read_dataset,
    read_points,
    save_model,
    write_config,
    write_csv,
)

DEFAULT_SEED = 20190425
GLOBAL_FLAGS = ("seed", "config", "out", "threads", "replicates")


def _config_for(args, experiment: str):
    cfg = read_config(args.config, experiment) if args.config else default_config(experiment)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.replicates is not None:
        cfg.replicates = args.replicates
        if cfg.sk_replicates is not None:
            cfg.sk_replicates = args.replicates
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out = args.out
    cfg.validate()
    return cfg


def _run_experiment(args, experiment: str, runner) -> int:
    cfg = _config_for(args, experiment)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / f"{experiment}_config.toml")
    runner(cfg, out)
    print(f"wrote {experiment} tables to {out}")
    return 0


def cmd_example1(args) -> int:
    return _run_experiment(args, "example1", run_example1)


def cmd_example2(args) -> int:
    return _run_experiment(args, "example2", run_example2)


def cmd_bounds(args) -> int:
    return _run_experiment(args, "bounds", run_bounds)


def _parse_fixed(items) -> dict:
    fixed = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--fix expects name=value, got {item!r}")
        fixed[name.strip()] = float(value)
    return fixed


def cmd_fit(args) -> int:
    ds = read_dataset(args.data, args.mean_basis)
    kernel = KernelSpec(args.family, nu=args.nu, dim=ds.dim)
    objective = SK_LIKELIHOOD if args.kind == SK else PSEUDO
    mode = args.mode or (CLOSED_FORM if args.family == GAUSSIAN else MONTE_CARLO)
    problem = EstimationProblem(
        ds, kernel, objective, starts=args.starts, mode=mode, fixed=_parse_fixed(args.fix)
    )
    seed = DEFAULT_SEED if args.seed is None else args.seed
    result = fit(problem, RngStream(seed))
    model = model_from_fit(problem, result, args.kind if args.kind != SK else None)
    path = Path(args.output or Path(args.out or ".") / "model.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    params = ", ".join(f"{k}={v:.6g}" for k, v in result.parameters.items())
    print(f"{model.kind} model ({params}); loglik={result.objective:.6f} -> {path}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    pts = read_points(args.points, model.dim)
    path = Path(args.output or Path(args.out or ".") / "predictions.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"x{k + 1}" for k in range(model.dim)] + ["mean", "mspe", "ci_low", "ci_high"]
    if len(pts) == 0:
        write_csv(path, header, [])
    else:
        b = predict_batch(model, pts, args.level)
        write_csv(path, header, np.column_stack([pts, b.mean, b.mspe, b.ci_low, b.ci_high]))
    print(f"wrote {len(pts)} predictions to {path}")
    return 0


def cmd_design(args) -> int:
    if args.kind == "grid":
        design = grid_design(args.n, args.low, args.high)
    elif args.kind == "halton":
        design = halton(args.n, args.dim)
    else:
        seed = DEFAULT_SEED if args.seed is None else args.seed
        design = maximin_lhd(args.n, args.dim, RngStream(seed), args.restarts)
    path = Path(args.output or Path(args.out or ".") / "design.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_design_csv(design, path)
    print(f"wrote {design.n}-point {design.kind} design to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment config file (key = value)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker processes")
    common.add_argument("--replicates", type=int, default=argparse.SUPPRESS, help="replicate count")

    parser = argparse.ArgumentParser(
        prog="kale",
        description="Kriging with input location error: KALE, KALEN and stochastic Kriging.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, text in (
        ("example1", cmd_example1, "1-d Gaussian-kernel study (RMSPE and coverage tables)"),
        ("example2", cmd_example2, "2-d Matérn study (RMSPE and timing table)"),
        ("bounds", cmd_bounds, "asymptotic limit/bound tables"),
    ):
        p = sub.add_parser(name, help=text, parents=[common])
        p.set_defaults(func=fn)

    p = sub.add_parser("fit", help="fit a model to a CSV dataset", parents=[common])
    p.add_argument("data", help="CSV with columns x1..xd,y")
    p.add_argument("--kind", choices=(KALE, KALEN, SK), default=KALE)
    p.add_argument("--family", choices=(GAUSSIAN, MATERN), default=GAUSSIAN)
    p.add_argument("--nu", type=float, default=3.0, help="Matérn smoothness")
    p.add_argument("--mean-basis", choices=MEAN_BASES, default="constant")
    p.add_argument("--mode", choices=(CLOSED_FORM, MONTE_CARLO), default=None)
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--fix", action="append", metavar="NAME=VALUE",
                   help="hold a parameter fixed (e.g. sigma_eps_sq=0)")
    p.add_argument("-o", "--output", default=None, help="model file (default OUT/model.json)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict with a saved model", parents=[common])
    p.add_argument("model")
    p.add_argument("points", help="CSV with columns x1..xd")
    p.add_argument("--level", type=float, default=0.05, help="beta for the (1-beta) interval")
    p.add_argument("-o", "--output", default=None, help="CSV (default OUT/predictions.csv)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("design", help="write a design to CSV", parents=[common])
    p.add_argument("--kind", choices=("grid", "halton", "lhd"), default="grid")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--low", type=float, default=0.0)
    p.add_argument("--high", type=float, default=1.0)
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_design)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in GLOBAL_FLAGS:
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except (ParseError, VersionMismatch, ExperimentFailed, ValueError) as exc:
        print(f"kale: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

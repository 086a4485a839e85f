"""Command-line entry point: ``irsmc <static|arch|tracking|highdim|verify> ...``."""

from __future__ import annotations

import argparse
import sys

from . import bench, verify

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 2, 3


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _param(text: str) -> tuple:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric value in {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irsmc", description="Independent-resampling SMC benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in bench.MODELS:
        p = sub.add_parser(name, help=f"run the {name} benchmark")
        p.add_argument("--particles", type=int, help="a single final particle count M")
        p.add_argument("--sizes", type=_int_list, help="comma list of final particle counts")
        p.add_argument("--algorithms", type=lambda s: tuple(a for a in s.split(",") if a))
        p.add_argument("--runs", type=int, help="Monte Carlo runs P")
        p.add_argument("--horizon", type=int, help="time steps T")
        p.add_argument("--seed", type=int)
        p.add_argument("--budget-matched", action=argparse.BooleanOptionalAction, default=None,
                       help="give classical filters N=(M^2+M)/2 particles")
        p.add_argument("--config", help="flat key=value config file (schema=1)")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE",
                       help="override a model parameter")
        p.add_argument("--workers", type=int, help="parallel processes over runs")
        p.add_argument("--timing", action="store_true", default=None, help="also report wall_ms")
        if name == "highdim":
            p.add_argument("--dims", type=_int_list, help="state dimensions, multiples of 4")
        if name == "tracking":
            p.add_argument("--informative", action="store_true",
                           help="use the sharp sensor (sigma_rho=0.05, sigma_theta=pi/3600)")
    sub.add_parser("verify", help="run the built-in property and oracle checks")
    return parser


def _config(args) -> bench.ExperimentConfig:
    params = dict(args.param)
    if getattr(args, "informative", False):
        params.setdefault("sigma_rho", 0.05)
        params.setdefault("sigma_theta", 3.141592653589793 / 3600)
    sizes = args.sizes
    if args.particles is not None:
        sizes = (args.particles,) if sizes is None else sizes + (args.particles,)
    overrides = dict(
        algorithms=args.algorithms, sizes=sizes, runs=args.runs, horizon=args.horizon,
        seed=args.seed, budget_matched=args.budget_matched, out=args.out, format=args.format,
        workers=args.workers, timing=args.timing, dims=getattr(args, "dims", None),
    )
    if args.config:
        cfg = bench.load_config(args.config, params=params, **overrides)
        if cfg.model != args.command:
            raise bench.ConfigError(f"config is for {cfg.model!r}, not {args.command!r}")
        return cfg
    kwargs = {k: v for k, v in overrides.items() if v is not None}
    return bench.ExperimentConfig(args.command, params=params, **kwargs)


def cli_main(argv=None) -> int:
    """Parse ``argv`` and run; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already wrote the usage error
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "verify":
        return EXIT_OK if verify.run_checks() else EXIT_VERIFY
    try:
        cfg = _config(args)
    except bench.ConfigError as exc:
        print(f"irsmc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = bench.run_bench(cfg).write(cfg.out)
    if not cfg.out:
        sys.stdout.write(text)
    return EXIT_OK


def main() -> None:
    sys.exit(cli_main())

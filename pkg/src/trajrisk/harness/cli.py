"""Command line entry point: ``trajrisk run`` and ``trajrisk verify``."""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError
from .config import load_config
from .runner import ExperimentFailure, OutputError, run_experiment
from .verify import run_checks

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajrisk", description="Risk curves along GD/SGD trajectories.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a Monte-Carlo experiment and write CSV files")
    run.add_argument("--config", help="flat key=value config file")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override one config key (repeatable)")
    run.add_argument("--out", help="output directory (experiment.output_dir)")
    run.add_argument("--seed", type=_u64, help="master seed (experiment.master_seed)")
    sub.add_parser("verify", help="run built-in checks on tiny instances")
    return parser


def _run(args) -> int:
    try:
        cfg = load_config(args.config, args.overrides, out=args.out, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(cfg)
    except ExperimentFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"{len(result.raw)} of {cfg.replicates} replicates ok, "
          f"{len(result.failures)} failed; wrote {cfg.output_dir}")
    return EXIT_OK


def _verify() -> int:
    results = run_checks()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail} ({r.seconds:.2f}s)")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _run(args)
    return _verify()


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``tnmpf <command> --config FILE [--out DIR] [--workers N] [--seed S]``."""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from .config import ConfigError, load_config
from .harness import COMMANDS, FidelityTooLow
from .mpf import MPFError
from .mps import BondDimensionExceeded

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_FIDELITY = 4
EXIT_INTERNAL = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnmpf", description="Dynamic multiproduct formula experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "compare": "Trotter vs direct MPS vs MPO-MPF error curves with memory accounting",
        "tests": "MPF-test and Trotter-test curves and crossover times",
        "observables": "single-k, MPF-combined and reference expectation values",
        "aqc": "compile an early window, then run tests/observables on the composite circuits",
        "scaling": "bond-dimension growth sweeps with scaling-law fits",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, type=Path, help="YAML experiment configuration")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
        p.add_argument("--workers", type=int, default=1, help="process-pool size for grid points")
        p.add_argument("--seed", type=int, default=None, help="estimator seed (overrides the config)")
    return parser


def _report(kind: str, message: str, code: int, **extra) -> int:
    doc = {"error": kind, "message": message, "exit_code": code}
    doc.update(extra)
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        return _report("config", "--workers must be >= 1", EXIT_CONFIG, errors=["--workers: must be >= 1"])
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        return _report("config", str(exc), EXIT_CONFIG, errors=[f"--config: {exc}"])
    except ConfigError as exc:
        return _report("config", str(exc), EXIT_CONFIG, errors=exc.errors)
    if args.seed is not None:
        cfg = cfg.with_updates(seed=args.seed)
    out = args.out or Path(cfg.output)
    try:
        COMMANDS[args.command](cfg, out, args.workers)
    except FidelityTooLow as exc:
        return _report("fidelity", str(exc), EXIT_FIDELITY, fidelity=exc.fidelity, floor=exc.floor)
    except (MPFError, BondDimensionExceeded, ArithmeticError) as exc:
        return _report("numerical", str(exc), EXIT_NUMERICAL)
    except ValueError as exc:
        return _report("config", str(exc), EXIT_CONFIG, errors=[str(exc)])
    except Exception as exc:  # noqa: BLE001 - every failure becomes a machine-readable report
        return _report("internal", f"{type(exc).__name__}: {exc}", EXIT_INTERNAL, traceback=traceback.format_exc())
    return 0


if __name__ == "__main__":
    sys.exit(main())

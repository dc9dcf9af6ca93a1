"""Command line entry point: ``confcap run|converge|plots|ledger``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from confcap.domain import InvalidScenario
from confcap.grid import GridError
from confcap.pipeline import (
    EXIT_INVALID,
    EXIT_OK,
    EXIT_SOLVER,
    build_ledger,
    convergence_study,
    emit_plot_data,
    load_config,
    run_scenario,
    set_threads,
)
from confcap.solver import SolverError


def _parser():
    p = argparse.ArgumentParser(prog="confcap", description="Conformal capacity, monotone quantities and mass verdicts.")
    p.add_argument("--deterministic", action="store_true", help="single-threaded linear algebra, no timing in outputs")
    p.add_argument("--threads", type=int, default=None, help="thread pool size (default: CONFCAP_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario end to end")
    r.add_argument("config")
    r.add_argument("--outputs", default=None, help="override the output directory")

    c = sub.add_parser("converge", help="refinement study of one scenario")
    c.add_argument("config")
    c.add_argument("--levels", type=int, default=2)
    c.add_argument("--output", default=None, help="CSV path (default: <outputs>/convergence.csv)")

    pl = sub.add_parser("plots", help="write plot-ready CSVs into a run directory")
    pl.add_argument("run_dir")

    lg = sub.add_parser("ledger", help="collect stability records from run directories")
    lg.add_argument("run_dirs", nargs="*")
    lg.add_argument("--output", default="ledger")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    limiter = set_threads(1 if args.deterministic else args.threads)
    try:
        if args.command == "run":
            config = load_config(args.config)
            if args.deterministic:
                config.deterministic = True
            if args.outputs:
                config.outputs = args.outputs
            status, _, message = run_scenario(config)
            print(message, file=sys.stdout if status == EXIT_OK else sys.stderr)
            return status
        if args.command == "converge":
            config = load_config(args.config)
            out = Path(args.output) if args.output else Path(config.outputs) / "convergence.csv"
            out.parent.mkdir(parents=True, exist_ok=True)
            try:
                rows = convergence_study(config, args.levels, out)
            except ValueError as exc:
                if isinstance(exc, (InvalidScenario, GridError)):
                    raise
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_INVALID
            for row in rows:
                print(" ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
            return EXIT_OK
        if args.command == "plots":
            run_dir = Path(args.run_dir)
            if not (run_dir / "series.csv").exists():
                print(f"error: no series.csv in {run_dir}", file=sys.stderr)
                return EXIT_INVALID
            for path in emit_plot_data(run_dir):
                print(path)
            return EXIT_OK
        if args.command == "ledger":
            missing = [d for d in args.run_dirs if not Path(d).is_dir()]
            if missing:
                print(f"error: not a directory: {', '.join(missing)}", file=sys.stderr)
                return EXIT_INVALID
            rows, fit = build_ledger(args.run_dirs, args.output)
            print(f"{len(rows)} records; fit {fit}")
            return EXIT_OK
    except (InvalidScenario, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

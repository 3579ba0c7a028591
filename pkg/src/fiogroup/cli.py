"""Command-line entry point: run a scenario and print its report."""

from __future__ import annotations

import argparse
import sys

from .scenario import (RunOptions, ScenarioError, bundled_scenarios, emit_report,
                       resolve_scenario_path, run_scenario)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fiogroup",
        description="Run a scenario of symbol-calculus, contact-geometry and FIO-group checks.")
    p.add_argument("--scenario", help="path to a scenario file or the name of a bundled one")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--tol-scale", type=float, default=1.0,
                   help="multiply every tolerance by this factor")
    p.add_argument("--grid", type=int, default=None,
                   help="quadrature points per axis for oracle commands")
    p.add_argument("--report-format", choices=("text", "machine"), default="text")
    p.add_argument("--fail-fast", action="store_true", help="stop at the first failing command")
    p.add_argument("--experimental-depth", action="store_true",
                   help="allow group operations at depth >= 1 (a model, not exact)")
    p.add_argument("--timings", action="store_true",
                   help="include wall times (output is then not byte-stable)")
    p.add_argument("--list-scenarios", action="store_true", help="list bundled scenarios")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.list_scenarios:
        print("\n".join(bundled_scenarios()))
        return 0
    if not args.scenario:
        print("error: --scenario is required", file=sys.stderr)
        return 2
    opts = RunOptions(seed=args.seed, tol_scale=args.tol_scale, grid=args.grid,
                      fail_fast=args.fail_fast, experimental_depth=args.experimental_depth,
                      timings=args.timings)
    try:
        report = run_scenario(resolve_scenario_path(args.scenario), opts)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(emit_report(report, args.report_format))
    return 0 if report.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

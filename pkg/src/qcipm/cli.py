"""Command line front end: `bench run ...`.

Exit codes: 0 when every record converged (or, under a fixed iteration
count, completed the requested iterations), 1 when any solve fell short,
2 for usage errors.
"""
from __future__ import annotations

import argparse
import os
import sys

from .benchmark import (report_to_csv, report_to_json, run_benchmark,
                        save_report)
from .problem_io import load_problem


def _iters_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected 'auto' or a positive integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("iteration count must be positive")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("value must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench",
        description="Benchmark harness for the structured QCQP solver.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a benchmark suite")
    run.add_argument("--suite", choices=("table1", "table2", "custom"),
                     default="table1",
                     help="built-in mass-spring suite, or 'custom' with a "
                          "problem file")
    run.add_argument("--mode", choices=("speed", "balance", "robust"),
                     default="balance", help="solver settings preset")
    run.add_argument("--iters", type=_iters_arg, default="auto",
                     metavar="N|auto",
                     help="fixed iteration count, or 'auto' to stop on "
                          "convergence")
    run.add_argument("--condense", choices=("none", "x0", "full", "partial"),
                     default=None,
                     help="run only this preprocessing pipeline instead of "
                          "the suite's defaults")
    run.add_argument("--block-size", type=_positive_int, default=3,
                     metavar="K", help="target stages per partial "
                                       "condensing block")
    run.add_argument("--problem-file", metavar="PATH",
                     help="problem description file for --suite custom")
    run.add_argument("--out", metavar="PATH",
                     help="write the report here instead of stdout")
    run.add_argument("--format", choices=("csv", "json"), default="csv",
                     help="report format")
    run.add_argument("--seed", type=int, default=0,
                     help="seed for the initial-state draw")
    run.add_argument("--repeats", type=_positive_int, default=1,
                     metavar="N", help="timing repeats; the report keeps "
                                       "the fastest")
    run.add_argument("--plot", action="store_true",
                     help="also render figures next to --out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)

        if not 0 <= args.seed < 2 ** 64:
            parser.error("--seed must fit in an unsigned 64-bit integer")
        if args.suite == "custom" and not args.problem_file:
            parser.error("--suite custom requires --problem-file")
        if args.problem_file and args.suite != "custom":
            parser.error("--problem-file requires --suite custom")
        if args.plot and not args.out:
            parser.error("--plot requires --out")

        problems = None
        if args.problem_file is not None:
            try:
                loaded = load_problem(args.problem_file)
            except (OSError, ValueError) as exc:
                parser.error(f"cannot load problem file: {exc}")
            name = os.path.splitext(os.path.basename(args.problem_file))[0]
            problems = [(name, loaded)]

        try:
            report = run_benchmark(
                suite=args.suite, mode=args.mode, iters=args.iters,
                condense=args.condense, block_size=args.block_size,
                seed=args.seed, repeats=args.repeats, problems=problems)
        except ValueError as exc:
            print(f"bench: error: {exc}", file=sys.stderr)
            return 2
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0

    if args.out:
        save_report(report, args.out, args.format)
        if args.plot:
            from .plots import render_report
            for path in render_report(report, args.out):
                print(f"wrote {path}", file=sys.stderr)
    else:
        text = (report_to_csv(report) if args.format == "csv"
                else report_to_json(report))
        sys.stdout.write(text)

    ok = (report.all_converged() if args.iters == "auto"
          else report.all_completed())
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())

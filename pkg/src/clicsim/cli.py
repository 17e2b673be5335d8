"""Command-line entry point. Every number printed comes from library calls."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import BenchError
from .fabric import WiringError
from .hart import HartError
from .kernel import KernelError
from .runner import compare, run_scenario, trace_one
from .scenario import BUNDLED, ScenarioError, load
from .sim import SimError
from .xrce import XrceError, serve_stream

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_TIMEOUT = 0, 2, 3, 4

log = logging.getLogger("clicsim")


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, help="override bench.seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override a scenario value, e.g. bench.runs=100 (repeatable)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for independent runs")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="clicsim", description="CLINT/PLIC vs CLIC interrupt latency simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    hint = f"scenario file, or a bundled name ({', '.join(BUNDLED)})"
    p = sub.add_parser("run", parents=[common], help="run a scenario and write reports")
    p.add_argument("file", help=hint)
    p = sub.add_parser("compare", parents=[common], help="compare the scenario's platform configs")
    p.add_argument("file", help=hint)
    p = sub.add_parser("trace", parents=[common], help="write the JSONL trace of one run")
    p.add_argument("file", help=hint)
    p.add_argument("--metric", required=True)
    p.add_argument("--run", type=int, default=0, help="run index (default 0)")
    p.add_argument("--platform", help="platform name (default: first)")
    sub.add_parser("agent", help="serve an XRCE agent on stdin/stdout (loopback mode)")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "agent":
            serve_stream(sys.stdin.buffer, sys.stdout.buffer)
            return EXIT_OK
        if args.jobs < 1:
            raise ScenarioError("--jobs must be >= 1")
        scen = load(args.file, args.override, args.seed)
        if args.command == "trace":
            trace = trace_one(scen, args.metric, args.run, args.platform)
            args.out.mkdir(parents=True, exist_ok=True)
            path = args.out / f"trace_{args.metric}.jsonl"
            path.write_text(trace.to_jsonl(), encoding="utf-8", newline="\n")
            print(path)
            return EXIT_OK
        outcome = (compare if args.command == "compare" else run_scenario)(scen, args.jobs)
        paths = outcome.write(args.out)
        sys.stdout.write(outcome.report.table())
        for p in paths:
            print(p)
        if outcome.timeouts:
            print(f"error: {outcome.timeouts} ping-pong round(s) timed out", file=sys.stderr)
            return EXIT_TIMEOUT
        return EXIT_OK
    except ScenarioError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BenchError, SimError, KernelError, HartError, WiringError, XrceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

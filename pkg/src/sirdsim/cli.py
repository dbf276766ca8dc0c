"""Command-line front end: single runs and one-axis parameter sweeps.

Exit codes: 0 success, 2 configuration problem, 3 runtime invariant violation.
All artifact paths are relative to --out.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import Optional

from .config import ConfigError, RunConfig, parse_config, parse_value
from .engine import InvariantViolation, SimulationError
from .runner import Runner, SUMMARY_COLUMNS

SWEEP_AXES = ("global_bucket_bytes", "sender_threshold_bytes",
              "unsched_threshold_bytes", "applied_load_fraction", "priority_lanes")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sim", description="Credit-scheduled transport simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("config", help="path to a key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--trace", action="store_true",
                       help="emit a per-event protocol trace (trace.txt)")

    run_p = sub.add_parser("run", help="execute one config and write CSV artifacts")
    common(run_p)

    sweep_p = sub.add_parser("sweep", help="run one config across values of one axis")
    common(sweep_p)
    sweep_p.add_argument("--axis", required=True,
                         help=f"parameter to sweep, one of {', '.join(SWEEP_AXES)}")
    sweep_p.add_argument("--values", required=True,
                         help="comma-separated values; sizes accept KB/MB/xBDP, "
                              "sender_threshold_bytes accepts inf")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        return _run_one(cfg, args.out, args.trace)
    return _sweep(cfg, args)


def _run_one(cfg: RunConfig, out_dir: str, trace: bool) -> int:
    try:
        runner = Runner(cfg, out_dir=out_dir, collect_trace=trace)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = runner.run()
        runner.write_outputs()
    except InvariantViolation as exc:
        runner.close()
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except SimulationError as exc:
        runner.close()
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    print(f"run complete: goodput {summary['max_goodput_gbps']:.3f} Gbps, "
          f"p50 slowdown {summary['p50_slowdown']:.3f}; artifacts in {out_dir}")
    return EXIT_OK


def _sweep(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.axis not in SWEEP_AXES:
        print(f"config error: cannot sweep {args.axis!r}; "
              f"axes: {', '.join(SWEEP_AXES)}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        values = [parse_value(args.axis, part.strip(), cfg.bdp_bytes)
                  for part in args.values.split(",") if part.strip()]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not values:
        print("config error: --values is empty", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(args.out, exist_ok=True)
    worst = EXIT_OK
    rows: list[tuple[str, Optional[dict[str, float]], str]] = []
    for value in values:
        label = str(value)
        point_dir = os.path.join(args.out, f"{args.axis}={label}")
        try:
            point_cfg = dataclasses.replace(cfg, **{args.axis: value})
            runner = Runner(point_cfg, out_dir=point_dir, collect_trace=args.trace)
            summary = runner.run()
            runner.write_outputs()
            rows.append((label, summary, "ok"))
            print(f"{args.axis}={label}: goodput {summary['max_goodput_gbps']:.3f} Gbps")
        except ConfigError as exc:
            rows.append((label, None, "error:config"))
            worst = max(worst, EXIT_CONFIG)
            print(f"{args.axis}={label}: config error: {exc}", file=sys.stderr)
        except SimulationError as exc:
            rows.append((label, None, "error:invariant"))
            worst = max(worst, EXIT_INVARIANT)
            print(f"{args.axis}={label}: invariant violation: {exc}", file=sys.stderr)

    with open(os.path.join(args.out, "sweep.csv"), "w") as f:
        f.write("axis,value," + ",".join(SUMMARY_COLUMNS) + ",status\n")
        for label, summary, status in rows:
            cells = ([f"{summary[c]:.6f}" for c in SUMMARY_COLUMNS] if summary
                     else [""] * len(SUMMARY_COLUMNS))
            f.write(f"{args.axis},{label}," + ",".join(cells) + f",{status}\n")
    return worst


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``ppoher run|sweep|aggregate|plot``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from ppoher.config import from_flat, load_config, parse_overrides
from ppoher.experiment import aggregate, load_sweep, run_single, run_sweep, scaling_report
from ppoher.plotting import plot


def _cmd_run(args) -> int:
    overrides = parse_overrides(args.set)
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    cfg = load_config(args.config, overrides) if args.config else from_flat(overrides)
    result = run_single(cfg)
    print(f"{result.run_dir}: {result.status}")
    if result.rows:
        last = result.rows[-1]
        print(f"final success_rate={last.success_rate:.3f} at timestep {last.timestep}")
    return 0 if result.status == "completed" else 1


def _cmd_sweep(args) -> int:
    overrides = parse_overrides(args.set)
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    spec = load_sweep(args.spec, overrides)
    statuses, summary = run_sweep(spec, args.parallel)
    failed = [d for d, s in statuses.items() if s != "completed"]
    print(f"{len(statuses)} runs, {len(failed)} failed")
    for d in failed:
        print(f"  failed: {d}")
    if summary:
        _print_summary(summary)
    return 1 if failed else 0


def _print_summary(summary):
    for label, entry in summary["conditions"].items():
        print(
            f"{label}: final median success {entry['final_median_success']:.3f} "
            f"[IQR {entry['final_success_q25']:.3f}-{entry['final_success_q75']:.3f}] "
            f"over {entry['n_runs']} runs"
        )


def _cmd_aggregate(args) -> int:
    summary = aggregate(args.run_dir, final_fraction=args.final_fraction)
    if not summary["conditions"]:
        print("no completed runs found", file=sys.stderr)
        return 1
    _print_summary(summary)
    if args.scaling_axis:
        low, high = (json.loads(v) if v[:1].isdigit() or v[:1] == "-" else v for v in args.between)
        for line in scaling_report(summary, args.scaling_axis, low, high, args.group):
            print(line)
    return 0


def _cmd_plot(args) -> int:
    written = plot(args.summary, args.output, args.x)
    for p in written:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppoher", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train a single configuration")
    p.add_argument("--config", help="YAML file of dotted keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--output-dir")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run a sweep spec (base + axes + seeds)")
    p.add_argument("spec")
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a base config key")
    p.add_argument("--output-dir")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("aggregate", help="median/IQR summary of a run directory")
    p.add_argument("run_dir")
    p.add_argument("--final-fraction", type=float, default=0.2)
    p.add_argument("--scaling-axis", help="dotted key to report performance drops along")
    p.add_argument("--between", nargs=2, default=["2", "6"], metavar=("LOW", "HIGH"))
    p.add_argument("--group", default="her.strategy")
    p.set_defaults(func=_cmd_aggregate)

    p = sub.add_parser("plot", help="render summary.json as SVG charts")
    p.add_argument("summary")
    p.add_argument("--output", default="plots")
    p.add_argument("--x", choices=["timesteps", "wall_clock"], default="timesteps")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

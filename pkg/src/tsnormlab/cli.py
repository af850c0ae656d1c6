"""Command-line entry point: ``tsnormlab bound|expressivity|sweep|report``.

Exit codes: 0 ok, 1 empty or invalid data, 2 configuration error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import bench
from .errors import ConfigError, ConvergenceError, NumericError, ParseError, UnsupportedError

EXIT_OK = 0
EXIT_DATA = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed and TSNORMLAB_SEED")
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    common.add_argument("--c1-variant", choices=("appendix", "theorem2"), default=None)
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    p = argparse.ArgumentParser(prog="tsnormlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("bound", parents=[common], help="print the analytic bound as JSON")
    sub.add_parser("expressivity", parents=[common],
                   help="Monte-Carlo estimate next to the bound, as JSON")
    sub.add_parser("sweep", parents=[common], help="train every (strategy, seed) pair")
    rp = sub.add_parser("report", parents=[common], help="aggregate run records")
    rp.add_argument("--records", help="records.jsonl (default: <sweep output>/records.jsonl)")
    return p


def _need_config(args) -> dict:
    if not args.config:
        raise ConfigError("--config is required for this command", key="config")
    return bench.load_config(args.config)


def _cmd_bound(args, out) -> int:
    cfg = _need_config(args)
    seed = bench.resolve_seed(cfg, args.seed)
    report = bench.bound_report(cfg, seed, args.c1_variant)
    out.write(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def _cmd_expressivity(args, out) -> int:
    cfg = _need_config(args)
    seed = bench.resolve_seed(cfg, args.seed)
    result = bench.expressivity_report(cfg, seed, args.c1_variant)
    out.write(json.dumps(result, indent=2) + "\n")
    return EXIT_OK


def _cmd_sweep(args, out) -> int:
    cfg = _need_config(args)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1", key="jobs")
    # --seed narrows the sweep to a single seed
    path, written = bench.run_sweep(cfg, args.jobs, args.seed, log=lambda m: print(m, file=sys.stderr))
    out.write(json.dumps({"records": str(path), "new_records": written}) + "\n")
    return EXIT_OK


def _cmd_report(args, out) -> int:
    if args.records:
        path = args.records
    else:
        cfg = _need_config(args)
        _, _, outdir = bench._sweep_plan(cfg, None)
        path = outdir / "records.jsonl"
    records = bench.read_records(path)
    if not records:
        print(f"error: no records in {path}", file=sys.stderr)
        return EXIT_DATA
    rows = bench.aggregate(records)
    if not rows:
        print(f"error: no successful records in {path}", file=sys.stderr)
        return EXIT_DATA
    out.write(bench.report_csv(rows) if args.format == "csv" else bench.report_json(rows))
    return EXIT_OK


COMMANDS = {
    "bound": _cmd_bound,
    "expressivity": _cmd_expressivity,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ConvergenceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, UnsupportedError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

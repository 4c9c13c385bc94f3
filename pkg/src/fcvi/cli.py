"""Command line entry point: ``fcvi solve|sweep|report|plot-data|validate``.

Exit status: 0 success, 1 runtime failure (including failed cells),
2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError
from .harness import (
    ConfigDiagnostic,
    default_workers,
    load_config,
    load_summary,
    plot_data,
    report_csv,
    report_rows,
    report_text,
    run_experiment,
)

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output_dir:
        return Path(args.config).parent / cfg.output_dir
    raise ConfigError("no output directory: pass --out or set output_dir in the config")


def _run(args, workers: int) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    summary = run_experiment(cfg, out, workers=workers)
    n = len(summary["cells"])
    failed = summary["failed_cells"]
    print(f"{n - len(failed)}/{n} cells ok; summary written to {out / 'summary.json'}")
    for name in failed:
        err = next(c["error"] for c in summary["cells"] if c["name"] == name)
        print(f"  failed {name}: {err}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_solve(args) -> int:
    return _run(args, 1)


def cmd_sweep(args) -> int:
    workers = args.workers if args.workers is not None else default_workers()
    if workers < 1:
        raise ConfigError("--workers must be at least 1")
    return _run(args, workers)


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    _, inst = cfg.build_problem()
    meta = ", ".join(f"{k}={v:.6g}" for k, v in inst.metadata().items())
    print(f"ok: {inst.label or 'instance'} (n={inst.n}, m={inst.m}; {meta})")
    print(f"    {cfg.method} / {cfg.policy['name']}, horizons {list(cfg.horizons)}, {len(cfg.seeds)} seed(s)")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = report_rows([load_summary(p) for p in args.summaries])
    sys.stdout.write(report_text(rows))
    if args.csv:
        Path(args.csv).write_text(report_csv(rows))
    return EXIT_OK


def cmd_plot_data(args) -> int:
    text = plot_data(args.summaries)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fcvi", description="Function-constrained VI solvers and benchmarks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run every (horizon, seed) cell of a config serially")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run the cells of a config on a worker pool")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, help="worker processes (default: $FCVI_WORKERS or 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="tabulate one or more summary.json files")
    p.add_argument("summaries", nargs="+")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot-data", help="emit long-format CSV of all traces behind the summaries")
    p.add_argument("summaries", nargs="+")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigDiagnostic as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

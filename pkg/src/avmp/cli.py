"""Command-line front end: sweep, report, bootstrap, ingest-trace.

Exit codes: 0 success, 1 configuration error, 2 cell failure,
3 report/schema error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from avmp.errors import ConfigError, PairingError, SchemaError, TraceIngestError
from avmp.report import (
    default_bootstrap_reports,
    render_bootstrap,
    render_figures,
    render_tables,
    metric_series,
)
from avmp.stats import (
    DEFAULT_BOOTSTRAP_RESAMPLES,
    DEFAULT_BOOTSTRAP_SEED,
    paired_bootstrap_delta,
    paired_bootstrap_ratio,
)
from avmp.sweep import expand_grid, load_results, load_sweep_config, run_sweep
from avmp.workloads import load_sharegpt

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CELL = 2
EXIT_REPORT = 3


def _cmd_sweep(args) -> int:
    try:
        cfg = load_sweep_config(args.config)
        if args.output_dir:
            cfg.output_dir = args.output_dir
        if args.parallelism:
            cfg.parallelism = args.parallelism
        trace_counts = None
        trace_path = args.trace or cfg.trace_path
        if trace_path:
            trace_counts = load_sharegpt(trace_path)
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        results_path = out_dir / "results.jsonl"
        cells = expand_grid(cfg)
        print(f"sweep: {len(cells)} cells "
              f"({len(cfg.variants)} variants x {len(cfg.workloads)} workloads "
              f"x {len(cfg.models)} models x {len(cfg.budgets)} budgets "
              f"x {len(cfg.seeds)} seeds), parallelism {cfg.parallelism}")
    except (ConfigError, TraceIngestError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    def progress(done, total):
        if done % 10 == 0 or done == total:
            print(f"  {done}/{total} cells", flush=True)

    try:
        results = run_sweep(cfg, results_path, trace_counts, progress)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # a cell panic is fatal and identifies its cell
        print(f"cell failure: {exc}", file=sys.stderr)
        return EXIT_CELL

    if args.emit_events:
        # Event logs are only available from in-process runs of single cells;
        # re-run serially for the audit dump.
        from avmp.simulator import run_cell
        events_path = out_dir / "events.jsonl"
        with events_path.open("w") as fh:
            for cell in expand_grid(cfg):
                res = run_cell(cell, trace_counts)
                fh.write(json.dumps({"cell": cell.to_dict(),
                                     "events": res.events}) + "\n")
        print(f"wrote {events_path}")

    print(f"wrote {results_path} ({len(results)} records)")
    return EXIT_OK


def _cmd_report(args) -> int:
    try:
        results = []
        for path in args.results:
            results.extend(load_results(path))
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_REPORT
    out_dir = Path(args.output_dir)
    try:
        if args.mode == "tables":
            written = render_tables(results, out_dir)
        elif args.mode == "bootstrap":
            written = render_bootstrap(results, out_dir,
                                       args.bootstrap_resamples,
                                       args.bootstrap_seed)
        else:
            written = render_figures(results, out_dir / "figures")
            written += render_tables(results, out_dir)
    except (PairingError, SchemaError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_REPORT
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_bootstrap(args) -> int:
    try:
        results = []
        for path in args.results:
            results.extend(load_results(path))
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_REPORT
    try:
        if args.a and args.b:
            workloads = [args.workload] if args.workload else None
            a = metric_series(results, args.a, args.metric, workloads)
            b = metric_series(results, args.b, args.metric, workloads)
            fn = paired_bootstrap_ratio if args.ratio else paired_bootstrap_delta
            rep = fn(a, b, args.bootstrap_resamples, args.bootstrap_seed,
                     label=f"{args.a} vs {args.b} ({args.metric})")
            print(json.dumps(rep.to_dict(), indent=2))
        else:
            rows = default_bootstrap_reports(results, args.bootstrap_resamples,
                                             args.bootstrap_seed)
            for row in rows:
                print(json.dumps(row))
    except PairingError as exc:
        print(f"pairing error: {exc}", file=sys.stderr)
        return EXIT_REPORT
    return EXIT_OK


def _cmd_ingest_trace(args) -> int:
    try:
        counts = load_sharegpt(args.trace)
    except TraceIngestError as exc:
        print(f"ingest error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ordered = sorted(counts)
    n = len(ordered)
    floor_hits = sum(1 for c in counts if c == 16)
    summary = {
        "prompts": n,
        "clamp_floor_rate": round(floor_hits / n, 4),
        "median": ordered[(n - 1) // 2],
        "p95": ordered[min(n - 1, (95 * n) // 100)],
        "max": ordered[-1],
    }
    if args.output:
        Path(args.output).write_text(json.dumps(
            {"summary": summary, "counts": counts}))
        print(f"wrote {args.output}")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avmp",
        description="Two-pool allocator benchmark harness: run sweeps, "
                    "aggregate tables, bootstrap CIs, and render figures.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="expand a sweep grid and run every cell")
    p.add_argument("--config", required=True, help="sweep config file (JSON)")
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.add_argument("--parallelism", type=int, help="worker process count")
    p.add_argument("--trace", help="conversation corpus for sharegpt_replay")
    p.add_argument("--emit-events", action="store_true",
                   help="also write per-cell event logs (serial rerun)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="aggregate results into tables/figures")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--mode", choices=["tables", "bootstrap", "figures"],
                   default="tables")
    p.add_argument("--output-dir", default="report")
    p.add_argument("--bootstrap-resamples", type=int,
                   default=DEFAULT_BOOTSTRAP_RESAMPLES)
    p.add_argument("--bootstrap-seed", type=int, default=DEFAULT_BOOTSTRAP_SEED)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("bootstrap", help="paired bootstrap CI for a comparison")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--a", help="first variant label")
    p.add_argument("--b", help="second variant label")
    p.add_argument("--metric", default="oom_count")
    p.add_argument("--workload", help="restrict to one workload kind")
    p.add_argument("--ratio", action="store_true",
                   help="ratio of means instead of delta")
    p.add_argument("--bootstrap-resamples", type=int,
                   default=DEFAULT_BOOTSTRAP_RESAMPLES)
    p.add_argument("--bootstrap-seed", type=int, default=DEFAULT_BOOTSTRAP_SEED)
    p.set_defaults(func=_cmd_bootstrap)

    p = sub.add_parser("ingest-trace",
                       help="extract prompt token counts from a corpus")
    p.add_argument("--trace", required=True)
    p.add_argument("--output", help="write counts + summary JSON here")
    p.set_defaults(func=_cmd_ingest_trace)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

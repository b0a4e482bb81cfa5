"""Aggregate tables, bootstrap CI reports, and figure rendering.

The report path emits comma-separated tables for every aggregate and, in
figures mode, renders the matching matplotlib charts to PNG files alongside
the delimited series they were drawn from.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

from avmp.simulator import SCHEMA_VERSION, CellResult
from avmp.stats import (
    CellKey,
    aggregate_mean_sigma,
    mean,
    paired_bootstrap_delta,
    paired_bootstrap_ratio,
)

BASELINE_VARIANT = "padded_unified"
REFERENCE_STATIC = "fixed_dual_mr05"
REFERENCE_DYNAMIC = "avmp_dynamic_b128"


# ---------------------------------------------------------------------------
# result indexing
# ---------------------------------------------------------------------------

def cell_key(result: CellResult) -> CellKey:
    return CellKey(
        workload=result.config.workload.kind,
        model=result.config.model.name,
        budget_bytes=result.config.budget_bytes,
        seed=result.config.seed,
    )


def variant_labels(results) -> list[str]:
    seen = []
    for r in results:
        label = r.config.variant_label
        if label not in seen:
            seen.append(label)
    return seen


def workload_kinds(results) -> list[str]:
    seen = []
    for r in results:
        kind = r.config.workload.kind
        if kind not in seen:
            seen.append(kind)
    return seen


def metric_series(results, label: str, metric: str,
                  workloads=None) -> dict[CellKey, float]:
    """Per-cell metric values for one variant, keyed for paired comparison."""
    out = {}
    for r in results:
        if r.config.variant_label != label:
            continue
        if workloads is not None and r.config.workload.kind not in workloads:
            continue
        out[cell_key(r)] = float(getattr(r, metric))
    return out


def workload_aggregate(results, label: str, kind: str,
                       metric: str = "oom_count") -> tuple[float, float]:
    """Sum of per-(model, budget) seed-means, sigma propagated across groups."""
    groups: dict[tuple, list[float]] = defaultdict(list)
    for r in results:
        if r.config.variant_label == label and r.config.workload.kind == kind:
            groups[(r.config.model.name, r.config.budget_bytes)].append(
                float(getattr(r, metric)))
    if not groups:
        return math.nan, math.nan
    per_group, total_sigma = aggregate_mean_sigma(groups)
    return sum(m for m, _ in per_group.values()), total_sigma


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

def oom_table(results) -> list[dict]:
    """Cross-workload totals per variant, Table-1 shape."""
    kinds = workload_kinds(results)
    rows = []
    baseline_total = None
    for label in variant_labels(results):
        row = {"variant": label}
        total_mean = 0.0
        total_var = 0.0
        for kind in kinds:
            m, s = workload_aggregate(results, label, kind, "oom_count")
            row[f"{kind}_mean"] = round(m, 2)
            row[f"{kind}_sigma"] = round(s, 2)
            total_mean += m
            total_var += s * s
        row["total_mean"] = round(total_mean, 2)
        row["total_sigma"] = round(math.sqrt(total_var), 2)
        rows.append(row)
        if label == BASELINE_VARIANT:
            baseline_total = total_mean
    for row in rows:
        if baseline_total and baseline_total > 0:
            row["delta_pct_vs_padded"] = round(
                100.0 * (row["total_mean"] - baseline_total) / baseline_total, 1)
        else:
            row["delta_pct_vs_padded"] = ""
    return rows


def metric_table(results, metric: str) -> list[dict]:
    """Per-variant per-workload plain means of one metric."""
    kinds = workload_kinds(results)
    rows = []
    for label in variant_labels(results):
        row = {"variant": label}
        for kind in kinds:
            values = [float(getattr(r, metric)) for r in results
                      if r.config.variant_label == label
                      and r.config.workload.kind == kind]
            row[kind] = round(mean(values), 3) if values else ""
        rows.append(row)
    return rows


def stage_tables(results) -> dict[str, list[dict]]:
    """Batch-size and threshold sweep summaries when those variants are present."""
    out: dict[str, list[dict]] = {}
    labels = variant_labels(results)

    batch_labels = [(int(label.rsplit("b", 1)[1]), label) for label in labels
                    if label.startswith("avmp_dynamic_b")
                    and label.rsplit("b", 1)[1].isdigit()]
    if len(batch_labels) > 1:
        kinds = workload_kinds(results)
        rows = []
        for b, label in sorted(batch_labels):
            row = {"batch_size": b}
            total_mean, total_var = 0.0, 0.0
            for kind in kinds:
                m, s = workload_aggregate(results, label, kind, "oom_count")
                row[f"{kind}_mean"] = round(m, 2)
                row[f"{kind}_sigma"] = round(s, 2)
                total_mean += m
                total_var += s * s
            row["total_mean"] = round(total_mean, 2)
            row["total_sigma"] = round(math.sqrt(total_var), 2)
            rows.append(row)
        out["stage1_batch_size"] = rows

    threshold_labels = [label for label in labels
                        if label.startswith("avmp_dynamic_b128")]
    if len(threshold_labels) > 1:
        rows = []
        for label in threshold_labels:
            cells = [r for r in results if r.config.variant_label == label]
            cfg = cells[0].config.allocator
            total_mean, total_var = 0.0, 0.0
            for kind in workload_kinds(results):
                m, s = workload_aggregate(results, label, kind, "oom_count")
                total_mean += m
                total_var += s * s
            rows.append({
                "variant": label,
                "threshold_low": cfg.threshold_low,
                "threshold_high": cfg.threshold_high,
                "total_oom_mean": round(total_mean, 2),
                "total_oom_sigma": round(math.sqrt(total_var), 2),
                "rebalance_count": sum(r.rebalance_count for r in cells),
            })
        out["stage2_thresholds"] = rows
    return out


# ---------------------------------------------------------------------------
# bootstrap report
# ---------------------------------------------------------------------------

def default_bootstrap_reports(results, n_resamples: int, rng_seed: int) -> list[dict]:
    """The standing comparisons, computed wherever both variants are present."""
    labels = set(variant_labels(results))
    kinds = workload_kinds(results)
    rows = []

    def add(report, workload):
        rows.append({"comparison": report.label, "workload": workload,
                     "kind": report.kind, "n": report.n,
                     "point": round(report.point, 4),
                     "ci_low": round(report.ci_low, 4),
                     "ci_high": round(report.ci_high, 4),
                     "significant": "yes" if report.significant else "no"})

    def delta(a_label, b_label, metric, workloads, tag):
        a = metric_series(results, a_label, metric, workloads)
        b = metric_series(results, b_label, metric, workloads)
        if a and b:
            add(paired_bootstrap_delta(
                a, b, n_resamples, rng_seed,
                label=f"{a_label} - {b_label} ({metric})"), tag)

    def ratio(a_label, b_label, metric, workloads, tag):
        a = metric_series(results, a_label, metric, workloads)
        b = metric_series(results, b_label, metric, workloads)
        if a and b and any(v != 0 for v in b.values()):
            add(paired_bootstrap_ratio(
                a, b, n_resamples, rng_seed,
                label=f"{a_label} / {b_label} ({metric})"), tag)

    if {REFERENCE_DYNAMIC, REFERENCE_STATIC} <= labels:
        for kind in kinds:
            delta(REFERENCE_DYNAMIC, REFERENCE_STATIC, "oom_count", [kind], kind)
        delta(REFERENCE_DYNAMIC, REFERENCE_STATIC, "oom_count", None,
              "cross_workload")
        for kind in kinds:
            ratio(REFERENCE_DYNAMIC, REFERENCE_STATIC, "goodput", [kind], kind)
        for kind in kinds:
            delta(REFERENCE_DYNAMIC, REFERENCE_STATIC,
                  "effective_batch_size_p50", [kind], kind)
    if {"avmp_static_mr05", REFERENCE_STATIC} <= labels:
        delta("avmp_static_mr05", REFERENCE_STATIC, "oom_count", None,
              "cross_workload")
    if {"fixed_dual_mr09", REFERENCE_STATIC} <= labels:
        delta("fixed_dual_mr09", REFERENCE_STATIC, "oom_count", None,
              "cross_workload")
    if {BASELINE_VARIANT, REFERENCE_STATIC} <= labels:
        delta(BASELINE_VARIANT, REFERENCE_STATIC, "oom_count", None,
              "cross_workload")
    return rows


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def write_csv(path: Path, rows: list[dict]) -> None:
    """Write rows with a schema_version column so tables are versioned too."""
    if not rows:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [{**row, "schema_version": SCHEMA_VERSION} for row in rows]
    fields = list(rows[0].keys())
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def phase_fraction_rows(results) -> list[dict]:
    rows = []
    for label in variant_labels(results):
        for kind in workload_kinds(results):
            cells = [r for r in results if r.config.variant_label == label
                     and r.config.workload.kind == kind]
            if not cells:
                continue
            fracs = {"service": 0.0, "oom_retry": 0.0, "migration": 0.0,
                     "idle": 0.0}
            for r in cells:
                total = sum(r.phase.values())
                if total <= 0:
                    continue
                for name in fracs:
                    fracs[name] += r.phase[f"{name}_s"] / total
            n = len(cells)
            rows.append({"variant": label, "workload": kind,
                         **{k: round(v / n, 4) for k, v in fracs.items()}})
    return rows


def render_tables(results, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in [
        ("oom_table.csv", oom_table(results)),
        ("goodput_table.csv", metric_table(results, "goodput")),
        ("batch_p50_table.csv", metric_table(results, "effective_batch_size_p50")),
        ("reserved_bytes_table.csv", metric_table(results, "peak_reserved_bytes")),
    ]:
        path = out_dir / name
        write_csv(path, rows)
        written.append(path)
    for name, rows in stage_tables(results).items():
        path = out_dir / f"{name}.csv"
        write_csv(path, rows)
        written.append(path)
    return written


def render_bootstrap(results, out_dir: Path, n_resamples: int,
                     rng_seed: int) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = default_bootstrap_reports(results, n_resamples, rng_seed)
    path = out_dir / "bootstrap_ci.csv"
    write_csv(path, rows)
    return [path]


def render_figures(results, out_dir: Path) -> list[Path]:
    """Plot the evaluation figures and drop their CSV series next to them."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    labels = variant_labels(results)
    kinds = workload_kinds(results)

    # 1. OOM totals per workload, grouped bars
    oom_rows = []
    for label in labels:
        for kind in kinds:
            m, s = workload_aggregate(results, label, kind, "oom_count")
            oom_rows.append({"variant": label, "workload": kind,
                             "oom_mean": round(m, 2), "oom_sigma": round(s, 2)})
    csv_path = out_dir / "oom_by_workload.csv"
    write_csv(csv_path, oom_rows)
    written.append(csv_path)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    width = 0.8 / max(1, len(labels))
    for vi, label in enumerate(labels):
        xs = [ki + vi * width for ki in range(len(kinds))]
        ys = [next(r["oom_mean"] for r in oom_rows
                   if r["variant"] == label and r["workload"] == k)
              for k in kinds]
        ax.bar(xs, ys, width=width, label=label)
    ax.set_xticks([ki + 0.4 - width / 2 for ki in range(len(kinds))])
    ax.set_xticklabels(kinds)
    ax.set_ylabel("OOM events (sum of per-cell means)")
    ax.set_title("OOM totals per workload")
    ax.legend(fontsize=7)
    fig.tight_layout()
    png = out_dir / "oom_by_workload.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    written.append(png)

    # 2. Phase fraction stacks
    phase_rows = phase_fraction_rows(results)
    csv_path = out_dir / "phase_fractions.csv"
    write_csv(csv_path, phase_rows)
    written.append(csv_path)

    fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(phase_rows)), 4.5))
    names = [f"{r['variant']}\n{r['workload']}" for r in phase_rows]
    bottoms = [0.0] * len(phase_rows)
    for bucket, color in [("service", "#1f77b4"), ("oom_retry", "#d62728"),
                          ("migration", "#ff7f0e"), ("idle", "#c7c7c7")]:
        vals = [r[bucket] for r in phase_rows]
        ax.bar(range(len(phase_rows)), vals, bottom=bottoms, label=bucket,
               color=color)
        bottoms = [b + v for b, v in zip(bottoms, vals)]
    ax.set_xticks(range(len(phase_rows)))
    ax.set_xticklabels(names, fontsize=6, rotation=90)
    ax.set_ylabel("fraction of cell wall time")
    ax.set_title("Wall-clock phase decomposition")
    ax.legend(fontsize=7)
    fig.tight_layout()
    png = out_dir / "phase_fractions.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    written.append(png)

    # 3. Goodput ratio vs the reference static, with bootstrap CIs
    if {REFERENCE_DYNAMIC, REFERENCE_STATIC} <= set(labels):
        ratio_rows = []
        for kind in kinds:
            a = metric_series(results, REFERENCE_DYNAMIC, "goodput", [kind])
            b = metric_series(results, REFERENCE_STATIC, "goodput", [kind])
            if not a or not b or all(v == 0 for v in b.values()):
                continue
            rep = paired_bootstrap_ratio(a, b, label=f"goodput {kind}")
            ratio_rows.append({"workload": kind, "ratio": round(rep.point, 3),
                               "ci_low": round(rep.ci_low, 3),
                               "ci_high": round(rep.ci_high, 3)})
        if ratio_rows:
            csv_path = out_dir / "goodput_ratio.csv"
            write_csv(csv_path, ratio_rows)
            written.append(csv_path)
            fig, ax = plt.subplots(figsize=(6, 4))
            xs = range(len(ratio_rows))
            ys = [r["ratio"] for r in ratio_rows]
            yerr = [[r["ratio"] - r["ci_low"] for r in ratio_rows],
                    [r["ci_high"] - r["ratio"] for r in ratio_rows]]
            ax.bar(xs, ys, yerr=yerr, capsize=4, color="#2ca02c")
            ax.axhline(1.0, linestyle="--", color="black", linewidth=0.8)
            ax.set_xticks(list(xs))
            ax.set_xticklabels([r["workload"] for r in ratio_rows])
            ax.set_ylabel(f"{REFERENCE_DYNAMIC} / {REFERENCE_STATIC} goodput")
            ax.set_title("Goodput ratio with bootstrap 95% CI")
            fig.tight_layout()
            png = out_dir / "goodput_ratio.png"
            fig.savefig(png, dpi=120)
            plt.close(fig)
            written.append(png)

    # 4. OOM vs migration batch size, when a batch sweep is present
    stage = stage_tables(results).get("stage1_batch_size")
    if stage:
        csv_path = out_dir / "oom_vs_batch_size.csv"
        write_csv(csv_path, stage)
        written.append(csv_path)
        fig, ax = plt.subplots(figsize=(6, 4))
        bs = [row["batch_size"] for row in stage]
        for kind in kinds:
            ax.plot(bs, [row[f"{kind}_mean"] for row in stage], marker="o",
                    label=kind)
        ax.plot(bs, [row["total_mean"] for row in stage], marker="s",
                linewidth=2, color="black", label="total")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("migration batch size")
        ax.set_ylabel("OOM events")
        ax.set_title("OOM count vs migration batch size")
        ax.legend(fontsize=7)
        fig.tight_layout()
        png = out_dir / "oom_vs_batch_size.png"
        fig.savefig(png, dpi=120)
        plt.close(fig)
        written.append(png)

    # 5. Peak reserved bytes per variant
    reserved_rows = []
    for label in labels:
        values = [r.peak_reserved_bytes for r in results
                  if r.config.variant_label == label]
        reserved_rows.append({"variant": label,
                              "peak_reserved_mib": round(mean(values) / 2**20, 1)})
    csv_path = out_dir / "reserved_bytes.csv"
    write_csv(csv_path, reserved_rows)
    written.append(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(reserved_rows)),
           [r["peak_reserved_mib"] for r in reserved_rows], color="#9467bd")
    ax.set_xticks(range(len(reserved_rows)))
    ax.set_xticklabels([r["variant"] for r in reserved_rows], fontsize=7,
                       rotation=30, ha="right")
    ax.set_ylabel("peak reserved MiB")
    ax.set_title("Reserved footprint per variant")
    fig.tight_layout()
    png = out_dir / "reserved_bytes.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    written.append(png)

    return written

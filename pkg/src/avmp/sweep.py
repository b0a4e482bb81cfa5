"""Sweep-grid expansion and the (optionally parallel) cell runner.

Cells share nothing: execution may fan out over a process pool, but results
are always emitted in the deterministic grid order (variants, workloads,
models, budgets, seeds), so a rerun of the same config produces records in
the same order regardless of the parallelism setting.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from avmp.errors import ConfigError, SchemaError
from avmp.models import BUILTIN_MODELS, ModelSpec, load_model_specs
from avmp.presets import resolve_variant
from avmp.simulator import SCHEMA_VERSION, CellConfig, CellResult, run_cell
from avmp.workloads import WorkloadSpec


@dataclass
class SweepConfig:
    """One sweep: the full grid plus execution settings."""

    variants: list[tuple[str, object]]          # (label, AllocatorConfig)
    workloads: list[WorkloadSpec]
    models: list[ModelSpec]
    budgets: list[int]
    seeds: list[int]
    parallelism: int = 1
    output_dir: str = "out"
    retry_backoff_ticks: int = 5
    stall_guard_ticks: int = 400
    trace_path: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, axis in (("variants", self.variants),
                           ("workloads", self.workloads),
                           ("models", self.models),
                           ("budgets", self.budgets),
                           ("seeds", self.seeds)):
            if not axis:
                raise ConfigError(f"sweep axis {name!r} is empty")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    @property
    def grid_size(self) -> int:
        return (len(self.variants) * len(self.workloads) * len(self.models)
                * len(self.budgets) * len(self.seeds))


def load_sweep_config(path: str | Path) -> SweepConfig:
    """Parse and validate a sweep config file (JSON)."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read sweep config {path}: {exc}") from exc

    variants = [resolve_variant(v) for v in raw.get("variants", [])]

    workloads = []
    for w in raw.get("workloads", []):
        workloads.append(WorkloadSpec(
            kind=w["kind"],
            n_requests=int(w["n_requests"]),
            seed=int(w.get("seed", 0)),        # overridden by the cell seed
            params=dict(w.get("params", {})),
        ))

    model_file = raw.get("model_file")
    known = dict(BUILTIN_MODELS)
    if model_file:
        base = Path(path).parent
        known.update(load_model_specs((base / model_file)
                                      if not Path(model_file).is_absolute()
                                      else model_file))
    models = []
    for m in raw.get("models", []):
        if isinstance(m, str):
            if m not in known:
                raise ConfigError(f"unknown model {m!r}")
            models.append(known[m])
        else:
            models.append(ModelSpec.from_dict(m))

    return SweepConfig(
        variants=variants,
        workloads=workloads,
        models=models,
        budgets=[int(b) for b in raw.get("budgets", [])],
        seeds=[int(s) for s in raw.get("seeds", [])],
        parallelism=int(raw.get("parallelism", 1)),
        output_dir=raw.get("output_dir", "out"),
        retry_backoff_ticks=int(raw.get("retry_backoff_ticks", 5)),
        stall_guard_ticks=int(raw.get("stall_guard_ticks", 400)),
        trace_path=raw.get("trace_path"),
        extra={k: v for k, v in raw.items() if k.startswith("x_")},
    )


def expand_grid(cfg: SweepConfig) -> list[CellConfig]:
    """Full cross product in fixed axis order; one CellConfig per cell."""
    cells = []
    for label, alloc_cfg in cfg.variants:
        for workload in cfg.workloads:
            for model in cfg.models:
                for budget in cfg.budgets:
                    for seed in cfg.seeds:
                        cells.append(CellConfig(
                            variant_label=label,
                            allocator=alloc_cfg,
                            workload=workload,
                            model=model,
                            budget_bytes=budget,
                            seed=seed,
                            retry_backoff_ticks=cfg.retry_backoff_ticks,
                            stall_guard_ticks=cfg.stall_guard_ticks,
                        ))
    return cells


def _run_one(args) -> dict:
    cell, trace_counts = args
    return run_cell(cell, trace_counts).to_record()


def run_sweep(cfg: SweepConfig, results_path: str | Path | None = None,
              trace_counts: list[int] | None = None,
              progress=None) -> list[CellResult]:
    """Run every cell; stream records to disk in deterministic grid order."""
    cells = expand_grid(cfg)
    needs_trace = any(w.kind == "sharegpt_replay" for w in cfg.workloads)
    if needs_trace and trace_counts is None:
        raise ConfigError("grid contains sharegpt_replay but no trace was ingested")

    out_path = Path(results_path) if results_path else None
    if out_path:
        out_path.parent.mkdir(parents=True, exist_ok=True)

    records: list[dict] = []
    sink = out_path.open("w") if out_path else None
    try:
        if cfg.parallelism == 1:
            iterator = (_run_one((cell, trace_counts)) for cell in cells)
            for i, record in enumerate(iterator):
                records.append(record)
                if sink:
                    sink.write(json.dumps(record) + "\n")
                    sink.flush()
                if progress:
                    progress(i + 1, len(cells))
        else:
            with ProcessPoolExecutor(max_workers=cfg.parallelism) as pool:
                for i, record in enumerate(pool.map(
                        _run_one, ((cell, trace_counts) for cell in cells))):
                    records.append(record)
                    if sink:
                        sink.write(json.dumps(record) + "\n")
                        sink.flush()
                    if progress:
                        progress(i + 1, len(cells))
    finally:
        if sink:
            sink.close()
    return [CellResult.from_record(r) for r in records]


def load_results(path: str | Path) -> list[CellResult]:
    """Read a line-delimited results file, enforcing the schema version."""
    results = []
    with Path(path).open() as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{line_no}: invalid record: {exc}") from exc
            version = record.get("schema_version")
            if version != SCHEMA_VERSION:
                raise SchemaError(
                    f"{path}:{line_no}: schema_version {version!r} != "
                    f"{SCHEMA_VERSION!r}")
            results.append(CellResult.from_record(record))
    return results

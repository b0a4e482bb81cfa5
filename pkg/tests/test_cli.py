"""CLI surface: grid expansion, sweep determinism, reports, exit codes."""

import json

import pytest

from avmp.cli import main
from avmp.errors import ConfigError
from avmp.sweep import expand_grid, load_results, load_sweep_config, run_sweep

MIB = 2**20

TIMING_FIELDS = {"goodput", "time_to_first_oom_s", "phase"}


def _grid_config(n_variants, n_workloads, n_models, n_budgets, n_seeds):
    variants = ["padded_unified", "fixed_dual_mr05", "fixed_dual_mr09",
                "avmp_static_mr05", "avmp_dynamic_b128"][:n_variants]
    variants += [f"avmp_dynamic_b{2**i}" for i in range(n_variants - 5)]
    workloads = [{"kind": k, "n_requests": 10}
                 for k in ("uniform_short", "mixed_long", "agentic_burst")][:n_workloads]
    models = ["jamba_1_5_mini", "mamba2_1b3"][:n_models]
    return {
        "variants": variants,
        "workloads": workloads,
        "models": models,
        "budgets": [16 * MIB * (i + 1) for i in range(n_budgets)],
        "seeds": list(range(n_seeds)),
    }


def _write(tmp_path, cfg, name="sweep.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


@pytest.mark.parametrize("axes,expected", [
    ((5, 3, 2, 2, 3), 180),
    ((5, 1, 2, 2, 3), 60),
    ((9, 3, 2, 2, 3), 324),
])
def test_expand_grid_counts(tmp_path, axes, expected):
    cfg = load_sweep_config(_write(tmp_path, _grid_config(*axes)))
    assert cfg.grid_size == expected
    assert len(expand_grid(cfg)) == expected


def test_grid_order_is_lexicographic(tmp_path):
    cfg = load_sweep_config(_write(tmp_path, _grid_config(2, 2, 1, 1, 2)))
    cells = expand_grid(cfg)
    order = [(c.variant_label, c.workload.kind, c.seed) for c in cells]
    assert order == [
        ("padded_unified", "uniform_short", 0),
        ("padded_unified", "uniform_short", 1),
        ("padded_unified", "mixed_long", 0),
        ("padded_unified", "mixed_long", 1),
        ("fixed_dual_mr05", "uniform_short", 0),
        ("fixed_dual_mr05", "uniform_short", 1),
        ("fixed_dual_mr05", "mixed_long", 0),
        ("fixed_dual_mr05", "mixed_long", 1),
    ]


def test_empty_axis_rejected(tmp_path):
    bad = _grid_config(2, 1, 1, 1, 1)
    bad["seeds"] = []
    with pytest.raises(ConfigError):
        load_sweep_config(_write(tmp_path, bad))


def _tiny_sweep(tmp_path, parallelism=1):
    cfg_dict = {
        "variants": ["fixed_dual_mr05", "avmp_dynamic_b128"],
        "workloads": [{"kind": "uniform_short", "n_requests": 25,
                       "params": {"arrival_rate": 0.2}}],
        "models": ["jamba_1_5_mini"],
        "budgets": [16 * MIB],
        "seeds": [1, 2],
        "parallelism": parallelism,
        "retry_backoff_ticks": 20,
    }
    return load_sweep_config(_write(tmp_path, cfg_dict, f"tiny{parallelism}.json"))


def _event_view(results):
    return [(r.config.variant_label, r.config.seed) + r.event_key()
            for r in results]


def test_rerun_and_parallelism_are_event_identical(tmp_path):
    serial = run_sweep(_tiny_sweep(tmp_path, 1), tmp_path / "a.jsonl")
    again = run_sweep(_tiny_sweep(tmp_path, 1), tmp_path / "b.jsonl")
    parallel = run_sweep(_tiny_sweep(tmp_path, 2), tmp_path / "c.jsonl")
    assert _event_view(serial) == _event_view(again) == _event_view(parallel)
    # records differ at most in the timing fields
    rec_a = [json.loads(line) for line in (tmp_path / "a.jsonl").read_text().splitlines()]
    rec_c = [json.loads(line) for line in (tmp_path / "c.jsonl").read_text().splitlines()]
    for a, c in zip(rec_a, rec_c):
        for rec in (a, c):
            for field in TIMING_FIELDS:
                rec.pop(field)
        assert a == c


def test_results_file_roundtrip(tmp_path):
    run_sweep(_tiny_sweep(tmp_path), tmp_path / "r.jsonl")
    results = load_results(tmp_path / "r.jsonl")
    assert len(results) == 4
    assert all(r.schema_version == "1.3.0" for r in results)


def test_cli_sweep_report_figures(tmp_path):
    cfg = {
        "variants": ["padded_unified", "fixed_dual_mr05", "avmp_static_mr05",
                     "avmp_dynamic_b128", "avmp_dynamic_b8"],
        "workloads": [{"kind": "uniform_short", "n_requests": 20,
                       "params": {"arrival_rate": 0.2}},
                      {"kind": "agentic_burst", "n_requests": 40}],
        "models": ["jamba_1_5_mini"],
        "budgets": [16 * MIB],
        "seeds": [3, 4],
        "output_dir": str(tmp_path / "out"),
    }
    cfg_path = _write(tmp_path, cfg)
    assert main(["sweep", "--config", str(cfg_path)]) == 0
    results = tmp_path / "out" / "results.jsonl"
    assert results.exists()

    report_dir = tmp_path / "report"
    assert main(["report", "--results", str(results), "--mode", "figures",
                 "--output-dir", str(report_dir)]) == 0
    figures = report_dir / "figures"
    for name in ("oom_by_workload.png", "phase_fractions.png",
                 "reserved_bytes.png", "oom_by_workload.csv",
                 "phase_fractions.csv", "reserved_bytes.csv"):
        assert (figures / name).exists(), name
    assert (report_dir / "oom_table.csv").exists()

    # phase fractions partition wall time, and every table is versioned
    import csv
    with (figures / "phase_fractions.csv").open() as fh:
        for row in csv.DictReader(fh):
            assert row["schema_version"] == "1.3.0"
            total = sum(float(row[k]) for k in
                        ("service", "oom_retry", "migration", "idle"))
            assert abs(total - 1.0) <= 0.01

    # totals column is the sum of the per-workload means
    with (report_dir / "oom_table.csv").open() as fh:
        for row in csv.DictReader(fh):
            per_workload = sum(float(v) for k, v in row.items()
                               if k.endswith("_mean") and k != "total_mean")
            assert float(row["total_mean"]) == pytest.approx(per_workload, abs=0.02)

    assert main(["report", "--results", str(results), "--mode", "bootstrap",
                 "--output-dir", str(report_dir),
                 "--bootstrap-resamples", "500"]) == 0
    assert (report_dir / "bootstrap_ci.csv").exists()


def test_cli_bootstrap_subcommand(tmp_path, capsys):
    run_sweep(_tiny_sweep(tmp_path), tmp_path / "r.jsonl")
    code = main(["bootstrap", "--results", str(tmp_path / "r.jsonl"),
                 "--a", "avmp_dynamic_b128", "--b", "fixed_dual_mr05",
                 "--metric", "oom_count", "--bootstrap-resamples", "200"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert {"point", "ci_low", "ci_high", "significant"} <= set(out)


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"variants\": []}")
    assert main(["sweep", "--config", str(bad)]) == 1
    assert main(["sweep", "--config", str(tmp_path / "missing.json")]) == 1


def test_cli_cell_failure_exit_code(tmp_path):
    cfg = {
        "variants": ["fixed_dual_mr05"],
        "workloads": [{"kind": "uniform_short", "n_requests": 5,
                       "params": {"prompt_lo": 100, "prompt_hi": 50}}],
        "models": ["jamba_1_5_mini"],
        "budgets": [16 * MIB],
        "seeds": [1],
        "output_dir": str(tmp_path / "out"),
    }
    assert main(["sweep", "--config", str(_write(tmp_path, cfg))]) == 2


def test_cli_schema_error_exit_code(tmp_path):
    bogus = tmp_path / "r.jsonl"
    bogus.write_text(json.dumps({"schema_version": "9.9.9"}) + "\n")
    assert main(["report", "--results", str(bogus)]) == 3


def test_cli_ingest_trace(tmp_path, capsys):
    corpus = tmp_path / "trace.json"
    corpus.write_text(json.dumps([
        {"conversations": [{"from": "human", "value": " ".join(["w"] * 20)}]},
        {"conversations": [{"from": "human", "value": "hi"}]},
    ]))
    out_path = tmp_path / "counts.json"
    assert main(["ingest-trace", "--trace", str(corpus),
                 "--output", str(out_path)]) == 0
    data = json.loads(out_path.read_text())
    assert data["counts"] == [26, 16]
    assert data["summary"]["clamp_floor_rate"] == 0.5
    assert main(["ingest-trace", "--trace", str(tmp_path / "nope.json")]) == 1

"""Session fixtures: the desk-scale grids are expensive, so run once."""

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import pytest

from avmp.presets import VARIANT_PRESETS
from avmp.simulator import run_cell
from avmp.sweep import expand_grid, load_sweep_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
DESK_CONFIG = CONFIG_DIR / "desk.json"

WORKERS = 4


def _run_one(cell):
    return run_cell(cell)

def run_cells(cells, workers=WORKERS):
    """Run cells on a process pool, preserving grid order."""
    if workers == 1:
        return [run_cell(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, cells))


def desk_sweep_config():
    return load_sweep_config(DESK_CONFIG)


def _grid_for(variant_labels):
    cfg = desk_sweep_config()
    cfg.variants = [(label, VARIANT_PRESETS[label]) for label in variant_labels]
    return expand_grid(cfg)


@pytest.fixture(scope="session")
def desk_results():
    """The 90-cell desk grid: 5 variants x 3 workloads x 2 budgets x 3 seeds."""
    return run_cells(expand_grid(desk_sweep_config()))


@pytest.fixture(scope="session")
def bsweep_results():
    """The migration-batch-size axis over the 18-cell desk grid."""
    labels = [f"avmp_dynamic_b{b}" for b in (1, 8, 128, 256)]
    return run_cells(_grid_for(labels))


@pytest.fixture(scope="session")
def threshold_results():
    """The four threshold variants plus the reference, over the desk grid."""
    labels = ["avmp_dynamic_b128", "avmp_dynamic_b128_th_high_010",
              "avmp_dynamic_b128_th_high_020", "avmp_dynamic_b128_th_low_002",
              "avmp_dynamic_b128_th_low_010"]
    return run_cells(_grid_for(labels))

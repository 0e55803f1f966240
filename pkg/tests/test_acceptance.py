"""
Reproduções pesadas (minutos): tendência de egress no mapa de cinco saídas
e escalonamento do pool. Rodam só com EVAC_ACCEPTANCE=1.
"""

import csv
import os
from pathlib import Path

import pytest

from app.engines.grid_world import load_grid
from app.reports import ExperimentConfig, bench_planners, run_experiment

MAPS = Path(__file__).resolve().parent.parent / "data" / "maps"

pytestmark = pytest.mark.skipif(os.getenv("EVAC_ACCEPTANCE") != "1", reason="defina EVAC_ACCEPTANCE=1")


@pytest.fixture(autouse=True)
def _isolated_state(tmp_path, monkeypatch):
    monkeypatch.setenv("STATE_DIR", str(tmp_path / "state"))


def _read(path: Path):
    lines = path.read_text(encoding="utf-8").splitlines()
    return list(csv.DictReader(lines[1:]))


def _egress_cfg(out_dir: Path, trials: int) -> ExperimentConfig:
    return ExperimentConfig(
        densities=[0.06], policies=["congestion_aware", "nearest_exit"], trials=trials, seed=0,
        beta=0.5, gamma=5.0, patch_radius=3, replan_every=5, tick_limit=10000, spawn="uniform",
        v_max=1.5, v_min_frac=0.1, rho_cap=6.0, tick_seconds=1.0, raw_heuristic=False,
        workers=min(8, os.cpu_count() or 1), out_dir=str(out_dir),
    )


def test_congestion_aware_beats_nearest_exit_on_five_exit_map(tmp_path):
    grid = load_grid(MAPS / "five_exits.map")
    record = run_experiment(_egress_cfg(tmp_path / "egress", 30), grid)

    assert record["mean_egress"]["0.06:congestion_aware"] < record["mean_egress"]["0.06:nearest_exit"]
    paired = _read(tmp_path / "egress" / "paired.csv")
    assert float(paired[0]["p_value"]) < 0.05

    deciles = _read(tmp_path / "egress" / "deciles.csv")
    aware = {r["decile"]: float(r["mean_remaining"]) for r in deciles if r["policy"] == "congestion_aware"}
    nearest = {r["decile"]: float(r["mean_remaining"]) for r in deciles if r["policy"] == "nearest_exit"}
    assert all(aware[k] <= nearest[k] for k in nearest)


def test_egress_outputs_are_byte_identical(tmp_path):
    grid = load_grid(MAPS / "five_exits.map")
    run_experiment(_egress_cfg(tmp_path / "a", 3), grid)
    run_experiment(_egress_cfg(tmp_path / "b", 3), grid)
    for name in ("runs.csv", "curves.csv", "summary.csv", "deciles.csv", "paired.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_every_tick_replanning_small_scale(tmp_path):
    grid = load_grid(MAPS / "demo_room.map")
    cfg = _egress_cfg(tmp_path / "replan1", 5)
    cfg.replan_every = 1
    cfg.workers = 1
    record = run_experiment(cfg, grid)
    runs = _read(tmp_path / "replan1" / "runs.csv")
    assert all(r["completed"] == "1" for r in runs)
    assert set(record["mean_egress"]) == {"0.06:congestion_aware", "0.06:nearest_exit"}


@pytest.mark.skipif((os.cpu_count() or 1) < 8, reason="precisa de 8 núcleos")
def test_planner_scaling(tmp_path):
    grid = load_grid(MAPS / "five_exits.map")
    cfg = ExperimentConfig(
        beta=0.5, gamma=5.0, patch_radius=3, seed=0,
        bench_agents=[1000], bench_workers=[1, 8], bench_trials=1, out_dir=str(tmp_path / "bench"),
    )
    bench_planners(cfg, grid, backend="process")
    rows = {(r["planner"], int(r["workers"])): float(r["mean_ms"]) for r in _read(tmp_path / "bench" / "bench.csv")}
    assert rows[("single_pass", 1)] < rows[("repeated_astar", 1)]
    assert rows[("single_pass", 1)] < rows[("dijkstra", 1)]
    assert rows[("single_pass", 1)] / rows[("single_pass", 8)] >= 4.0

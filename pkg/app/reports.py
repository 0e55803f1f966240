"""
Relatórios - experimentos de evacuação, benchmark de planejadores e heatmap

Todas as saídas são CSV prontos para plotagem externa. Cada arquivo de
experimento começa com uma linha '#' de metadados (β, γ, patch, mapa,
cadência) para que ninguém leia um resultado sem saber os parâmetros.

Arquivos de run_experiment (em out_dir):
  runs.csv     density,policy,seed,total_egress_ticks,completed
  curves.csv   density,policy,seed,tick,remaining
  summary.csv  density,policy,trials,mean_egress,ci_low,ci_high,std
  deciles.csv  density,policy,decile,tick,mean_remaining
  paired.csv   density,mean_diff,t_stat,p_value,n   (congestion_aware − nearest_exit, unicaudal)

bench_planners → bench.csv  planner,agents,workers,mean_ms,trials
"""

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from app import db_state
from app.core.config import settings
from app.engines.crowd_sim import POLICIES, EgressStats, Scenario, run_evacuation
from app.engines.density_map import DensityField, DensityMap, heatmap_rows
from app.engines.grid_world import GridCoord, GridMap, validate_map
from app.engines.router import RoutePlanner
from app.execution.dispatch import MasterState, PlannerPool, RouteRequest, publish_snapshot, serve_queries

log = logging.getLogger("reports")

PLANNERS = RoutePlanner.PLANNERS


class ExperimentError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class ExperimentConfig:
    densities: List[float] = field(default_factory=lambda: list(settings.DENSITY_SWEEP))
    policies: List[str] = field(default_factory=lambda: list(POLICIES))
    trials: int = settings.TRIALS
    seed: int = settings.SEED
    beta: float = settings.BETA
    gamma: float = settings.GAMMA
    patch_radius: int = settings.PATCH_RADIUS
    replan_every: int = settings.REPLAN_EVERY
    tick_limit: int = settings.TICK_LIMIT
    spawn: str = settings.SPAWN_MODE
    clusters: int = settings.SPAWN_CLUSTERS
    cluster_spread: float = settings.SPAWN_CLUSTER_SPREAD
    v_max: float = settings.V_MAX
    v_min_frac: float = settings.V_MIN_FRAC
    rho_cap: float = settings.RHO_CAP
    tick_seconds: float = settings.TICK_SECONDS
    raw_heuristic: bool = settings.RAW_HEURISTIC
    confidence: float = settings.CONFIDENCE
    planners: List[str] = field(default_factory=lambda: list(PLANNERS))
    bench_agents: List[int] = field(default_factory=lambda: list(settings.BENCH_AGENTS))
    bench_workers: List[int] = field(default_factory=lambda: list(settings.BENCH_WORKERS))
    bench_trials: int = settings.BENCH_TRIALS
    workers: int = 1  # processos para rodar trials em paralelo
    out_dir: str = settings.RESULTS_DIR

    def validate(self) -> "ExperimentConfig":
        if self.trials < 1:
            raise ExperimentError("bad_trials", f"trials deve ser ≥ 1 (recebido {self.trials})")
        if not self.densities or any(d <= 0 for d in self.densities):
            raise ExperimentError("bad_sweep", f"densidades devem ser > 0 (recebido {self.densities})")
        bad = [p for p in self.policies if p not in POLICIES]
        if not self.policies or bad:
            raise ExperimentError("bad_policy", f"políticas inválidas: {bad or self.policies}")
        bad = [p for p in self.planners if p not in PLANNERS]
        if bad:
            raise ExperimentError("bad_planner", f"planejadores inválidos: {bad}")
        if self.bench_trials < 1 or self.workers < 1:
            raise ExperimentError("bad_trials", "bench_trials e workers devem ser ≥ 1")
        if any(a < 1 for a in self.bench_agents) or any(w < 1 for w in self.bench_workers):
            raise ExperimentError("bad_bench", "contagens de agentes e workers devem ser ≥ 1")
        return self

    def header(self, grid: GridMap) -> str:
        return (
            f"# map={grid.name or 'unnamed'} beta={self.beta} gamma={self.gamma} "
            f"patch_radius={self.patch_radius} replan_every={self.replan_every} spawn={self.spawn}"
        )


# ═══════════════════════════════════════════
# ESTATÍSTICA
# ═══════════════════════════════════════════

def mean_ci(values: Sequence[float], confidence: float = settings.CONFIDENCE) -> Tuple[float, float, float, float]:
    """(média, ic_inf, ic_sup, desvio) com t de Student; n=1 devolve o próprio ponto."""
    arr = np.asarray(values, dtype=np.float64)
    m = float(arr.mean())
    if arr.size < 2:
        return m, m, m, 0.0
    sd = float(arr.std(ddof=1))
    half = float(stats.t.ppf((1.0 + confidence) / 2.0, arr.size - 1)) * sd / math.sqrt(arr.size)
    return m, m - half, m + half, sd


def paired_less(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float, float]:
    """Teste t pareado unicaudal H1: média(a) < média(b). Devolve (diff média, t, p)."""
    a_arr, b_arr = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    diff = float((a_arr - b_arr).mean())
    if a_arr.size < 2 or np.all(a_arr == b_arr):
        return diff, float("nan"), float("nan")
    res = stats.ttest_rel(a_arr, b_arr, alternative="less")
    return diff, float(res.statistic), float(res.pvalue)


def mean_curve(curves: Sequence[Sequence[int]], horizon: int) -> np.ndarray:
    """Média das curvas de restantes, completando com 0 após a evacuação."""
    out = np.zeros(horizon, dtype=np.float64)
    for c in curves:
        n = min(len(c), horizon)
        out[:n] += np.asarray(c[:n], dtype=np.float64)
    return out / max(1, len(curves))


def decile_ticks(horizon: int) -> List[int]:
    return [max(1, math.ceil(k * horizon / 10)) for k in range(1, 11)]


# ═══════════════════════════════════════════
# EXPERIMENTO
# ═══════════════════════════════════════════

def _scenario(grid: GridMap, cfg: ExperimentConfig, density: float, policy: str, seed: int) -> Scenario:
    return Scenario(
        grid=grid,
        map_density=density,
        beta=cfg.beta,
        gamma=cfg.gamma,
        patch_radius=cfg.patch_radius,
        seed=seed,
        policy=policy,
        replan_every=cfg.replan_every,
        tick_limit=cfg.tick_limit,
        spawn=cfg.spawn,
        clusters=cfg.clusters,
        cluster_spread=cfg.cluster_spread,
        v_max=cfg.v_max,
        v_min_frac=cfg.v_min_frac,
        rho_cap=cfg.rho_cap,
        tick_seconds=cfg.tick_seconds,
        raw_heuristic=cfg.raw_heuristic,
    )


def _run_trial(job: Tuple[GridMap, ExperimentConfig, float, str, int]) -> EgressStats:
    grid, cfg, density, policy, seed = job
    return run_evacuation(_scenario(grid, cfg, density, policy, seed))


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def _write_csv(path: Path, header_line: Optional[str], columns: Sequence[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        if header_line:
            fh.write(header_line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def run_experiment(cfg: ExperimentConfig, grid: GridMap) -> Dict[str, object]:
    """
    Para cada (densidade, política, trial) roda run_evacuation com seed+i.
    As duas políticas usam as mesmas seeds, então os trials são pareados.
    """
    cfg.validate()
    diag = validate_map(grid)
    if not diag.valid:
        raise ExperimentError("invalid_map", f"mapa com {diag.unreachable} células sem saída alcançável")

    jobs = [
        (grid, cfg, d, p, cfg.seed + i)
        for d in cfg.densities
        for p in cfg.policies
        for i in range(cfg.trials)
    ]
    print(f"[experiment] {len(jobs)} execuções ({len(cfg.densities)} densidades × "
          f"{len(cfg.policies)} políticas × {cfg.trials} trials)", flush=True)
    t0 = time.perf_counter()
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_run_trial, jobs, chunksize=1))
    else:
        results = [_run_trial(j) for j in jobs]
    log.info(f"experimento concluído em {time.perf_counter() - t0:.1f}s")

    by_cell: Dict[Tuple[float, str], List[EgressStats]] = {}
    for (_, _, d, p, _), st in zip(jobs, results):
        by_cell.setdefault((d, p), []).append(st)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = cfg.header(grid)

    _write_csv(out / "runs.csv", head, ["density", "policy", "seed", "total_egress_ticks", "completed"], [
        [d, p, st.seed, st.total_egress_ticks, int(st.completed)]
        for (d, p), sts in by_cell.items() for st in sts
    ])
    _write_csv(out / "curves.csv", head, ["density", "policy", "seed", "tick", "remaining"], [
        [d, p, st.seed, t + 1, rem]
        for (d, p), sts in by_cell.items() for st in sts for t, rem in enumerate(st.remaining_curve)
    ])

    summary_rows, summary = [], {}
    for (d, p), sts in by_cell.items():
        m, lo, hi, sd = mean_ci([s.total_egress_ticks for s in sts], cfg.confidence)
        summary[f"{d}:{p}"] = m
        summary_rows.append([d, p, len(sts), _fmt(m), _fmt(lo), _fmt(hi), _fmt(sd)])
    _write_csv(out / "summary.csv", head,
               ["density", "policy", "trials", "mean_egress", "ci_low", "ci_high", "std"], summary_rows)

    decile_rows = []
    for d in cfg.densities:
        horizon = max(len(s.remaining_curve) for p in cfg.policies for s in by_cell[(d, p)])
        if horizon == 0:
            continue
        for p in cfg.policies:
            curve = mean_curve([s.remaining_curve for s in by_cell[(d, p)]], horizon)
            for k, tick in enumerate(decile_ticks(horizon), start=1):
                decile_rows.append([d, p, k, tick, _fmt(float(curve[tick - 1]))])
    _write_csv(out / "deciles.csv", head, ["density", "policy", "decile", "tick", "mean_remaining"], decile_rows)

    paired_rows = []
    if {"congestion_aware", "nearest_exit"} <= set(cfg.policies):
        for d in cfg.densities:
            a = [s.total_egress_ticks for s in by_cell[(d, "congestion_aware")]]
            b = [s.total_egress_ticks for s in by_cell[(d, "nearest_exit")]]
            diff, t, pv = paired_less(a, b)
            paired_rows.append([d, _fmt(diff), _fmt(t), _fmt(pv), len(a)])
    _write_csv(out / "paired.csv", head, ["density", "mean_diff", "t_stat", "p_value", "n"], paired_rows)

    files = {k: str(out / f"{k}.csv") for k in ("runs", "curves", "summary", "deciles", "paired")}
    record = {"kind": "experiment", "config": asdict(cfg), "map": grid.name, "files": files, "mean_egress": summary}
    db_state.save_state("last_run", record)
    print(f"[experiment] ✅ resultados em {out}", flush=True)
    return record


# ═══════════════════════════════════════════
# BENCHMARK
# ═══════════════════════════════════════════

def bench_population(grid: GridMap, agents: int, seed: int) -> List[GridCoord]:
    """Células livres distintas (sem repetição) para que nenhum planejador aproveite memória por célula."""
    free = grid.free_cells()
    if agents > len(free):
        raise ExperimentError("too_many_agents", f"{agents} agentes > {len(free)} células livres")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(free), size=agents, replace=False)
    return [free[int(i)] for i in picks]


def _time_serial(planner: str, grid: GridMap, dmap: DensityMap, cells: Sequence[GridCoord], beta: float) -> float:
    t0 = time.perf_counter()
    for c in cells:
        RoutePlanner.run_planner(planner, grid, dmap, c, beta)
    return (time.perf_counter() - t0) * 1000.0


def bench_planners(cfg: ExperimentConfig, grid: GridMap, backend: str = settings.WORKER_BACKEND) -> Dict[str, object]:
    """
    Mede só o planejamento (parse do mapa, sorteio e arranque do pool
    ficam fora da região medida). single_pass roda pelo PlannerPool, uma
    linha por contagem de workers; os outros planejadores rodam em série.
    """
    cfg.validate()
    if not grid.exits:
        raise ExperimentError("no_exits", "mapa sem saídas")

    rows: List[list] = []
    populations = {n: bench_population(grid, n, cfg.seed) for n in cfg.bench_agents}
    snapshots = {
        n: DensityField.from_cells(cells, grid, cfg.gamma, cfg.patch_radius, version=1)
        for n, cells in populations.items()
    }

    # single_pass passa pelo pool (uma linha por W); os demais rodam em série = 1 worker
    serial = [p for p in cfg.planners if p != "single_pass" or not cfg.bench_workers]
    for planner in serial:
        for n in cfg.bench_agents:
            times = [_time_serial(planner, grid, snapshots[n], populations[n], cfg.beta)
                     for _ in range(cfg.bench_trials)]
            rows.append([planner, n, 1, f"{sum(times) / len(times):.3f}", cfg.bench_trials])
            print(f"[bench] {planner:<15} agents={n:<5} W=1      {rows[-1][3]} ms", flush=True)

    if "single_pass" in cfg.planners and cfg.bench_workers:
        for w in cfg.bench_workers:
            with PlannerPool(grid, workers=w, backend=backend, beta=cfg.beta) as pool:
                pool.warm_up()
                for n in cfg.bench_agents:
                    state = MasterState(grid=grid, gamma=cfg.gamma, patch_radius=cfg.patch_radius,
                                        beta=cfg.beta, queue_bound=max(settings.QUEUE_BOUND, n))
                    for i, c in enumerate(populations[n]):
                        state.positions[i] = grid.cell_center(c)
                    publish_snapshot(state)
                    requests = [RouteRequest(i, state.positions[i], state.version) for i in range(n)]
                    times = []
                    for _ in range(cfg.bench_trials):
                        t0 = time.perf_counter()
                        serve_queries(state, requests, pool=pool)
                        times.append((time.perf_counter() - t0) * 1000.0)
                    rows.append(["single_pass", n, w, f"{sum(times) / len(times):.3f}", cfg.bench_trials])
                    print(f"[bench] single_pass     agents={n:<5} W={w:<3}    {rows[-1][3]} ms", flush=True)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench.csv"
    _write_csv(path, cfg.header(grid), ["planner", "agents", "workers", "mean_ms", "trials"], rows)
    record = {"kind": "bench", "config": asdict(cfg), "map": grid.name, "files": {"bench": str(path)},
              "rows": [dict(zip(["planner", "agents", "workers", "mean_ms", "trials"], r)) for r in rows]}
    db_state.save_state("last_bench", record)
    return record


# ═══════════════════════════════════════════
# HEATMAP
# ═══════════════════════════════════════════

def render_heatmap_csv(dmap: DensityMap) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "rho"])
    for x, y, rho in heatmap_rows(dmap):
        w.writerow([x, y, f"{rho:.6f}"])
    return buf.getvalue()

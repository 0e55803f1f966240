"""
Simulador de Evacuação em tempo discreto

Ciclo de cada tick (t = 1, 2, ...):
  0. Agente que já está numa célula de saída conta como evacuado neste tick.
  1. Reconstrói o snapshot de densidade com as posições atuais
     (agentes evacuados não entram).
  2. Nos ticks de replanejamento (t-1 múltiplo de replan_every) aplica a
     política de rota a todos os agentes ativos contra esse snapshot.
  3. Cada agente ganha v(ρ)·tick_seconds de orçamento de distância e avança
     célula a célula pela rota enquanto houver orçamento; o resto fica
     para o próximo tick.
  4. Registra quantos agentes ainda não evacuaram.

Modelo de velocidade:
  v = v_max · clamp(1 − ρ/ρ_cap, v_min_frac, 1)
ρ aqui é a densidade percebida: a da célula menos o pico do próprio agente
(γ/√(2π)), então um agente sozinho anda a v_max.

Agentes não colidem nem bloqueiam células; o congestionamento age só pelos
acoplamentos densidade→velocidade e densidade→custo da rota.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.engines.density_map import SQRT_2PI, DensityField, DensityMap
from app.engines.grid_world import GridCoord, GridMap, validate_map
from app.engines.router import Route, RoutePlanner, plan_route

log = logging.getLogger("sim")

POLICIES = ("congestion_aware", "nearest_exit")
SPAWN_MODES = ("uniform", "clustered")

# planejador em lote: (snapshot, [células]) → {célula: Route | None}
BatchPlanner = Callable[[DensityMap, List[GridCoord]], Dict[GridCoord, Optional[Route]]]


class ScenarioError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class SimulationAborted(RuntimeError):
    def __init__(self, tick: int, agent_id: int, cell: GridCoord):
        super().__init__(f"tick {tick}: agente {agent_id} em {tuple(cell)} sem rota até uma saída")
        self.tick = tick
        self.agent_id = agent_id
        self.cell = cell


# ═══════════════════════════════════════════
# TIPOS
# ═══════════════════════════════════════════

@dataclass
class Agent:
    id: int
    position: Tuple[float, float]
    cell: GridCoord
    route: Optional[Route] = None
    route_index: int = 0  # índice da célula atual dentro de route.cells
    evacuated: bool = False
    distance_budget: float = 0.0
    exit_cell: Optional[GridCoord] = None
    evacuated_at: Optional[int] = None


@dataclass
class Scenario:
    grid: GridMap
    map_density: float = settings.MAP_DENSITY
    beta: float = settings.BETA
    gamma: float = settings.GAMMA
    patch_radius: int = settings.PATCH_RADIUS
    seed: int = settings.SEED
    policy: str = settings.POLICY
    replan_every: int = settings.REPLAN_EVERY
    tick_seconds: float = settings.TICK_SECONDS
    v_max: float = settings.V_MAX
    v_min_frac: float = settings.V_MIN_FRAC
    rho_cap: float = settings.RHO_CAP
    tick_limit: int = settings.TICK_LIMIT
    spawn: str = settings.SPAWN_MODE
    clusters: int = settings.SPAWN_CLUSTERS
    cluster_spread: float = settings.SPAWN_CLUSTER_SPREAD
    raw_heuristic: bool = settings.RAW_HEURISTIC
    reroute_discount: float = settings.REROUTE_DISCOUNT
    predictive_movement: bool = settings.PREDICTIVE_MOVEMENT

    def validate(self) -> "Scenario":
        if self.map_density <= 0:
            raise ScenarioError("bad_density", f"map_density deve ser > 0 (recebido {self.map_density})")
        if not 0 < self.v_min_frac <= 1:
            raise ScenarioError("bad_speed", f"v_min_frac deve estar em (0, 1] (recebido {self.v_min_frac})")
        if self.v_max <= 0:
            raise ScenarioError("bad_speed", f"v_max deve ser > 0 (recebido {self.v_max})")
        if self.rho_cap <= 0:
            raise ScenarioError("bad_rho_cap", f"rho_cap deve ser > 0 (recebido {self.rho_cap})")
        if self.replan_every < 1:
            raise ScenarioError("bad_replan", f"replan_every deve ser ≥ 1 (recebido {self.replan_every})")
        if self.tick_seconds <= 0 or self.tick_limit < 1:
            raise ScenarioError("bad_tick", "tick_seconds > 0 e tick_limit ≥ 1 são obrigatórios")
        if not 0.0 <= self.beta <= 1.0:
            raise ScenarioError("bad_beta", f"beta deve estar em [0, 1] (recebido {self.beta})")
        if self.gamma <= 0 or self.patch_radius < 0:
            raise ScenarioError("bad_density_params", "gamma > 0 e patch_radius ≥ 0 são obrigatórios")
        if self.policy not in POLICIES:
            raise ScenarioError("bad_policy", f"política desconhecida '{self.policy}' (use {', '.join(POLICIES)})")
        if self.spawn not in SPAWN_MODES:
            raise ScenarioError("bad_spawn", f"spawn desconhecido '{self.spawn}' (use {', '.join(SPAWN_MODES)})")
        if self.reroute_discount != 0.0:
            raise ScenarioError("not_implemented", "reroute_discount é um gancho reservado, ainda não implementado")
        if self.predictive_movement:
            raise ScenarioError("not_implemented", "predictive_movement é um gancho reservado, ainda não implementado")
        return self

    @property
    def population(self) -> int:
        return int(round(self.map_density * len(self.grid.free_cells())))


@dataclass
class EgressStats:
    total_egress_ticks: int
    remaining_curve: List[int]
    per_agent_exit: List[Optional[GridCoord]]
    seed: int
    policy: str = ""
    population: int = 0
    completed: bool = True

    @property
    def evacuated(self) -> int:
        return sum(1 for e in self.per_agent_exit if e is not None)


@dataclass
class WorldState:
    grid: GridMap
    scenario: Scenario
    agents: List[Agent]
    tick: int = 0
    snapshot: Optional[DensityMap] = None
    remaining_curve: List[int] = field(default_factory=list)
    planner: Optional[BatchPlanner] = None
    _nearest_cache: Dict[GridCoord, Optional[Route]] = field(default_factory=dict)

    @property
    def active(self) -> List[Agent]:
        return [a for a in self.agents if not a.evacuated]


# ═══════════════════════════════════════════
# POPULAÇÃO
# ═══════════════════════════════════════════

def _agent_at(i: int, grid: GridMap, c: GridCoord) -> Agent:
    return Agent(id=i, position=grid.cell_center(c), cell=GridCoord(*c))


def spawn_population(scenario: Scenario) -> List[Agent]:
    """
    round(map_density · |células livres|) agentes em centros de células livres,
    sorteados com reposição (várias pessoas podem dividir a célula).
    Determinístico para uma mesma seed.
    """
    grid = scenario.grid
    free = grid.free_cells()
    n = int(round(scenario.map_density * len(free)))
    if n <= 0 or not free:
        raise ScenarioError("empty_population", f"população 0 (map_density={scenario.map_density}, livres={len(free)})")

    rng = np.random.default_rng(scenario.seed)
    if scenario.spawn == "clustered":
        cells = _clustered_cells(rng, grid, free, n, scenario.clusters, scenario.cluster_spread)
    else:
        picks = rng.integers(0, len(free), size=n)
        cells = [free[int(i)] for i in picks]
    return [_agent_at(i, grid, c) for i, c in enumerate(cells)]


def _clustered_cells(rng, grid: GridMap, free: List[GridCoord], n: int, k: int, spread: float) -> List[GridCoord]:
    """Aglomerados gaussianos em torno de k centros sorteados; cai no uniforme se não achar célula livre."""
    centers = [free[int(i)] for i in rng.integers(0, len(free), size=max(1, k))]
    out: List[GridCoord] = []
    for _ in range(n):
        cx, cy = centers[int(rng.integers(0, len(centers)))]
        for _attempt in range(20):
            dx, dy = rng.normal(0.0, spread, size=2)
            c = GridCoord(int(round(cx + dx)), int(round(cy + dy)))
            if grid.in_bounds(c) and grid.kinds[c.y, c.x] == 0:
                out.append(c)
                break
        else:
            out.append(free[int(rng.integers(0, len(free)))])
    return out


# ═══════════════════════════════════════════
# VELOCIDADE / POLÍTICAS
# ═══════════════════════════════════════════

def speed_from_density(rho: float, scenario: Scenario) -> float:
    frac = 1.0 - rho / scenario.rho_cap
    return scenario.v_max * min(1.0, max(scenario.v_min_frac, frac))


def nearest_exit_policy(grid: GridMap, src: GridCoord) -> Optional[Route]:
    """Linha de base: caminho mais curto (β=1, densidade ignorada) até a saída mais próxima."""
    return plan_route(grid, DensityField.flat(grid), src, grid.exits, 1.0)


def congestion_aware_policy(world: WorldState, cells: List[GridCoord]) -> Dict[GridCoord, Optional[Route]]:
    sc = world.scenario
    if world.planner is not None:
        return world.planner(world.snapshot, cells)
    planned = RoutePlanner.plan_cells(world.grid, world.snapshot, cells, sc.beta, sc.raw_heuristic)
    return {c: route for c, (route, _) in planned.items()}


def _assign_routes(world: WorldState) -> None:
    active = world.active
    # rota é função pura de (célula, snapshot): uma busca por célula distinta
    cells = sorted({a.cell for a in active}, key=lambda c: (c.y, c.x))
    if world.scenario.policy == "nearest_exit":
        for c in cells:
            if c not in world._nearest_cache:
                world._nearest_cache[c] = nearest_exit_policy(world.grid, c)
        routes = world._nearest_cache
    else:
        routes = congestion_aware_policy(world, cells)
    for a in active:
        route = routes.get(a.cell)
        if route is None:
            raise SimulationAborted(world.tick, a.id, a.cell)
        a.route = route
        a.route_index = 0


# ═══════════════════════════════════════════
# SIMULAÇÃO
# ═══════════════════════════════════════════

def make_world(scenario: Scenario, agents: Optional[Sequence[Agent]] = None, planner: Optional[BatchPlanner] = None) -> WorldState:
    scenario.validate()
    if agents is None:
        agents = spawn_population(scenario)
    return WorldState(grid=scenario.grid, scenario=scenario, agents=list(agents), planner=planner)


def place_agents(grid: GridMap, cells: Sequence[GridCoord]) -> List[Agent]:
    """Agentes em células explícitas (fixtures e testes)."""
    return [_agent_at(i, grid, GridCoord(*c)) for i, c in enumerate(cells)]


def _snapshot(world: WorldState) -> DensityMap:
    sc = world.scenario
    return DensityField.from_cells((a.cell for a in world.active), world.grid, sc.gamma, sc.patch_radius)


def _mark_evacuated(a: Agent, exit_cell: GridCoord, tick: int) -> None:
    a.evacuated = True
    a.exit_cell = GridCoord(*exit_cell)
    a.evacuated_at = tick
    a.distance_budget = 0.0


def step(world: WorldState, tick: int) -> WorldState:
    """Avança um tick (ver ciclo no topo do módulo). Muta e devolve o próprio world."""
    sc = world.scenario
    world.tick = tick
    for a in world.active:
        if world.grid.is_exit(a.cell):
            _mark_evacuated(a, a.cell, tick)
    world.snapshot = _snapshot(world)

    if (tick - 1) % sc.replan_every == 0 or any(a.route is None for a in world.active):
        _assign_routes(world)

    rho = world.snapshot.rho
    self_peak = sc.gamma / SQRT_2PI
    cs = world.grid.cell_size
    for a in world.active:
        perceived = max(0.0, float(rho[a.cell.y, a.cell.x]) - self_peak)
        a.distance_budget += speed_from_density(perceived, sc) * sc.tick_seconds
        cells = a.route.cells
        while a.route_index + 1 < len(cells):
            cur, nxt = cells[a.route_index], cells[a.route_index + 1]
            seg = math.hypot(nxt[0] - cur[0], nxt[1] - cur[1]) * cs
            if a.distance_budget + 1e-12 < seg:
                break
            a.distance_budget -= seg
            a.route_index += 1
            a.cell = nxt
            a.position = world.grid.cell_center(nxt)
            if world.grid.is_exit(nxt):
                _mark_evacuated(a, nxt, tick)
                break
        if not a.evacuated and a.route_index > 0:
            # a rota passa a começar na célula atual
            a.route = Route(cells[a.route_index:], a.route.chosen_exit, a.route.total_cost)
            a.route_index = 0

    world.remaining_curve.append(sum(1 for a in world.agents if not a.evacuated))
    return world


def run_evacuation(
    scenario: Scenario,
    agents: Optional[Sequence[Agent]] = None,
    planner: Optional[BatchPlanner] = None,
) -> EgressStats:
    """
    spawn → step até todos evacuarem ou estourar tick_limit.
    Totalmente determinístico dada a seed.
    """
    scenario.validate()
    diag = validate_map(scenario.grid)
    if not diag.valid:
        raise ScenarioError("invalid_map", f"mapa com {diag.unreachable} células livres sem saída alcançável")

    world = make_world(scenario, agents, planner)
    tick = 0
    while world.active and tick < scenario.tick_limit:
        tick += 1
        step(world, tick)

    completed = not world.active
    if not completed:
        log.warning(f"tick_limit {scenario.tick_limit} atingido com {len(world.active)} agentes restantes")
    return EgressStats(
        total_egress_ticks=len(world.remaining_curve),
        remaining_curve=list(world.remaining_curve),
        per_agent_exit=[a.exit_cell for a in world.agents],
        seed=scenario.seed,
        policy=scenario.policy,
        population=len(world.agents),
        completed=completed,
    )

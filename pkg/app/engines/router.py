"""
Roteador de Evacuação com Consciência de Congestionamento

A* multi-destino em passada única: uma única OpenList/ClosedList considera
todas as saídas ao mesmo tempo e termina quando qualquer saída é retirada
da fila com custo ótimo.

Custo da aresta p → s:
  c = β · dist(s, p) + (1 − β) · ρ[s]
Heurística:
  h = β · euclidiana(s, dst)       (admissível e consistente, pois ρ ≥ 0)

O modo `raw_heuristic=True` usa a euclidiana sem β (como descrita
originalmente), só para comparação: superestima quando β < 1.

Chaves das listas: só a posição. Para uma posição fixa o g não depende do
destino, então manter o candidato de menor f equivale a tomar o mínimo
sobre os destinos.

Desempate com f igual: menor h, depois menor (y, x).

Também expõe as linhas de base usadas no benchmark e nos oráculos:
A* clássico por saída (repeated_astar) e Dijkstra no mapa inteiro.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from app.engines.density_map import DensityMap, check_dimensions, query_density
from app.engines.grid_world import SQRT2, GridCoord, GridMap

log = logging.getLogger("router")


class PlanningError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class RouteCorruption(RuntimeError):
    """Cadeia de pais quebrada - corrupção interna, não deveria acontecer."""


# ═══════════════════════════════════════════
# TIPOS
# ═══════════════════════════════════════════

@dataclass
class PlanNode:
    pos: GridCoord
    parent: Optional[GridCoord]
    dst: GridCoord
    g: float
    h: float
    f: float = field(init=False)

    def __post_init__(self):
        self.f = self.g + self.h

    def sort_key(self) -> Tuple[float, float, int, int]:
        return (self.f, self.h, self.pos[1], self.pos[0])


@dataclass(frozen=True)
class Route:
    cells: Tuple[GridCoord, ...]
    chosen_exit: GridCoord
    total_cost: float

    @property
    def source(self) -> GridCoord:
        return self.cells[0]

    def __len__(self) -> int:
        return len(self.cells)


@dataclass
class SearchResult:
    route: Optional[Route]
    expansions: int
    popped_f: List[float] = field(default_factory=list)


class FrontierLists:
    """
    OpenList = heap ordenado por (f, h, y, x) + hash posição → nó vivo.
    Entradas superadas ficam no heap marcadas como obsoletas e são
    descartadas no pop (invalidação preguiçosa).
    ClosedList = posição → nó finalizado (menor g com que foi fechado).
    """

    def __init__(self):
        self._heap: List[Tuple[float, float, int, int, int, PlanNode]] = []
        self._live: Dict[GridCoord, PlanNode] = {}
        self.closed: Dict[GridCoord, PlanNode] = {}
        self._seq = 0

    def __len__(self) -> int:
        return len(self._live)

    def open_entry(self, pos: GridCoord) -> Optional[PlanNode]:
        return self._live.get(pos)

    def closed_g(self, pos: GridCoord) -> Optional[float]:
        node = self.closed.get(pos)
        return node.g if node is not None else None

    def push(self, node: PlanNode) -> None:
        self._live[node.pos] = node
        self._seq += 1
        f, h, y, x = node.sort_key()
        heapq.heappush(self._heap, (f, h, y, x, self._seq, node))

    def pop(self) -> Optional[PlanNode]:
        while self._heap:
            node = heapq.heappop(self._heap)[-1]
            if self._live.get(node.pos) is node:
                del self._live[node.pos]
                return node
        return None

    def close(self, node: PlanNode) -> None:
        self.closed[node.pos] = node


# ═══════════════════════════════════════════
# FUNÇÕES AUXILIARES DO ALGORITMO
# ═══════════════════════════════════════════

def _step_distance(p: GridCoord, s: GridCoord) -> float:
    dx, dy = abs(p[0] - s[0]), abs(p[1] - s[1])
    if dx > 1 or dy > 1 or (dx == 0 and dy == 0):
        raise PlanningError("not_adjacent", f"{tuple(p)} e {tuple(s)} não são adjacentes")
    return SQRT2 if dx and dy else 1.0


def edge_cost(p: GridCoord, s: GridCoord, dmap: DensityMap, beta: float) -> float:
    """c = β·dist + (1−β)·ρ[s], dist em células (1 ou √2)."""
    dist = _step_distance(p, s)
    return beta * dist + (1.0 - beta) * query_density(dmap, s)


def heuristic(s: GridCoord, dst: GridCoord, beta: float) -> float:
    return beta * math.hypot(s[0] - dst[0], s[1] - dst[1])


def validate_candidate(s: PlanNode, lists: FrontierLists) -> bool:
    """
    Insere s na OpenList se:
      (i)   a posição nunca foi vista;
      (ii)  a entrada aberta na mesma posição tem f maior;
      (iii) a entrada fechada na mesma posição tem g maior (reabre).
    """
    live = lists.open_entry(s.pos)
    if live is not None:
        return s.f < live.f
    closed_g = lists.closed_g(s.pos)
    if closed_g is not None:
        return s.g < closed_g
    return True


def trace_path(goal: PlanNode, closed: FrontierLists) -> Route:
    """Refaz o caminho seguindo `parent` até a origem; custo total = goal.g."""
    cells = [goal.pos]
    parent = goal.parent
    limit = len(closed.closed) + 1
    while parent is not None:
        node = closed.closed.get(parent)
        if node is None or len(cells) > limit:
            raise RouteCorruption(f"cadeia de pais quebrada em {tuple(parent)}")
        cells.append(node.pos)
        parent = node.parent
    cells.reverse()
    return Route(cells=tuple(cells), chosen_exit=goal.pos, total_cost=goal.g)


def _check_query(grid: GridMap, dmap: DensityMap, src: GridCoord, dsts: Sequence[GridCoord], beta: float):
    check_dimensions(dmap, grid)
    if not 0.0 <= beta <= 1.0:
        raise PlanningError("bad_beta", f"beta deve estar em [0, 1] (recebido {beta})")
    if not grid.in_bounds(src):
        raise PlanningError("out_of_bounds", f"origem {tuple(src)} fora do mapa")
    if grid.is_wall(src):
        raise PlanningError("src_wall", f"origem {tuple(src)} é parede")
    if not dsts:
        raise PlanningError("no_destinations", "lista de destinos vazia")
    for d in dsts:
        if not grid.in_bounds(d) or not grid.is_exit(d):
            raise PlanningError("bad_destination", f"destino {tuple(d)} não é saída")


# ═══════════════════════════════════════════
# BUSCA EM PASSADA ÚNICA
# ═══════════════════════════════════════════

def search(
    grid: GridMap,
    dmap: DensityMap,
    src: GridCoord,
    dsts: Sequence[GridCoord],
    beta: float,
    raw_heuristic: bool = False,
    record_f: bool = False,
) -> SearchResult:
    """
    Núcleo instrumentado do plan_route: devolve a rota (ou None), o número
    de expansões e, se pedido, a sequência de f dos nós retirados.
    """
    src = GridCoord(*src)
    dsts = [GridCoord(*d) for d in dsts]
    _check_query(grid, dmap, src, dsts, beta)
    dst_set = set(dsts)

    if src in dst_set:
        return SearchResult(Route((src,), src, 0.0), 0, [0.0] if record_f else [])

    rho = dmap.as_rows()
    h_scale = 1.0 if raw_heuristic else beta
    w_dist, w_rho = beta, 1.0 - beta

    def best_h(c: GridCoord) -> Tuple[float, GridCoord]:
        # todos os destinos avaliados; fica o de menor h (empate: menor (y, x))
        # uma saída é sempre o próprio destino, mesmo com h = 0 em todas (β = 0)
        if c in dst_set:
            return 0.0, c
        best, best_dst = math.inf, dsts[0]
        for d in dsts:
            hv = h_scale * math.hypot(c[0] - d[0], c[1] - d[1])
            if hv < best or (hv == best and (d[1], d[0]) < (best_dst[1], best_dst[0])):
                best, best_dst = hv, d
        return best, best_dst

    lists = FrontierLists()
    h0, d0 = best_h(src)
    lists.push(PlanNode(src, None, d0, 0.0, h0))
    expansions = 0
    popped: List[float] = []

    while True:
        p = lists.pop()
        if p is None:
            log.debug(f"sem rota a partir de {tuple(src)} ({expansions} expansões)")
            return SearchResult(None, expansions, popped)
        if record_f:
            popped.append(p.f)
        if p.pos in dst_set:
            return SearchResult(trace_path(p, lists), expansions, popped)

        expansions += 1
        for s, dist in grid.adjacency(p.pos):
            g = p.g + w_dist * dist + w_rho * rho[s[1]][s[0]]
            h, dst = best_h(s)
            cand = PlanNode(s, p.pos, dst, g, h)
            if validate_candidate(cand, lists):
                lists.push(cand)
        lists.close(p)


def plan_route(
    grid: GridMap,
    dmap: DensityMap,
    src: GridCoord,
    dsts: Sequence[GridCoord],
    beta: float,
    raw_heuristic: bool = False,
) -> Optional[Route]:
    """Rota de menor custo até a melhor saída; None quando nenhuma saída é alcançável."""
    return search(grid, dmap, src, dsts, beta, raw_heuristic).route


# ═══════════════════════════════════════════
# LINHAS DE BASE (benchmark / oráculos)
# ═══════════════════════════════════════════

def astar_single(
    grid: GridMap, dmap: DensityMap, src: GridCoord, dst: GridCoord, beta: float,
) -> SearchResult:
    """A* clássico para um único destino, mesma função de custo."""
    src, dst = GridCoord(*src), GridCoord(*dst)
    _check_query(grid, dmap, src, [dst], beta)
    if src == dst:
        return SearchResult(Route((src,), src, 0.0), 0)
    rho = dmap.as_rows()
    g_score: Dict[GridCoord, float] = {src: 0.0}
    parent: Dict[GridCoord, Optional[GridCoord]] = {src: None}
    closed = set()
    heap = [(beta * math.hypot(src[0] - dst[0], src[1] - dst[1]), 0.0, src)]
    expansions = 0
    while heap:
        _, g, p = heapq.heappop(heap)
        if p in closed or g > g_score[p]:
            continue
        if p == dst:
            cells = [p]
            while parent[cells[-1]] is not None:
                cells.append(parent[cells[-1]])
            cells.reverse()
            return SearchResult(Route(tuple(cells), dst, g), expansions)
        closed.add(p)
        expansions += 1
        for s, dist in grid.adjacency(p):
            if s in closed:
                continue
            ng = g + beta * dist + (1.0 - beta) * rho[s[1]][s[0]]
            if ng < g_score.get(s, math.inf):
                g_score[s] = ng
                parent[s] = p
                heapq.heappush(heap, (ng + beta * math.hypot(s[0] - dst[0], s[1] - dst[1]), ng, s))
    return SearchResult(None, expansions)


def repeated_astar(
    grid: GridMap, dmap: DensityMap, src: GridCoord, dsts: Sequence[GridCoord], beta: float,
) -> SearchResult:
    """Uma passada de A* por saída; fica a rota mais barata. Expansões somadas."""
    best: Optional[Route] = None
    total = 0
    for d in dsts:
        res = astar_single(grid, dmap, src, d, beta)
        total += res.expansions
        if res.route is not None and (best is None or res.route.total_cost < best.total_cost):
            best = res.route
    return SearchResult(best, total)


def dijkstra_all(
    grid: GridMap, dmap: DensityMap, src: GridCoord, dsts: Sequence[GridCoord], beta: float,
) -> SearchResult:
    """Dijkstra exaustivo a partir de src (sem parada antecipada); rota até a saída mais barata."""
    src = GridCoord(*src)
    dsts = [GridCoord(*d) for d in dsts]
    _check_query(grid, dmap, src, dsts, beta)
    rho = dmap.as_rows()
    dist_to: Dict[GridCoord, float] = {src: 0.0}
    parent: Dict[GridCoord, Optional[GridCoord]] = {src: None}
    done = set()
    heap = [(0.0, src[1], src[0], src)]
    expansions = 0
    while heap:
        g, _, _, p = heapq.heappop(heap)
        if p in done:
            continue
        done.add(p)
        expansions += 1
        for s, step in grid.adjacency(p):
            if s in done:
                continue
            ng = g + beta * step + (1.0 - beta) * rho[s[1]][s[0]]
            if ng < dist_to.get(s, math.inf):
                dist_to[s] = ng
                parent[s] = p
                heapq.heappush(heap, (ng, s[1], s[0], s))

    reached = [d for d in dsts if d in done]
    if not reached:
        return SearchResult(None, expansions)
    goal = min(reached, key=lambda d: (dist_to[d], d[1], d[0]))
    cells = [goal]
    while parent[cells[-1]] is not None:
        cells.append(parent[cells[-1]])
    cells.reverse()
    return SearchResult(Route(tuple(cells), goal, dist_to[goal]), expansions)


# ═══════════════════════════════════════════
# FACHADA
# ═══════════════════════════════════════════

class RoutePlanner:
    """Entradas do roteador usadas pelo simulador, pelo dispatch e pelo benchmark."""

    PLANNERS = ("single_pass", "repeated_astar", "dijkstra")

    @staticmethod
    def plan_cells(
        grid: GridMap,
        dmap: DensityMap,
        cells: Iterable[GridCoord],
        beta: float,
        raw_heuristic: bool = False,
    ) -> Dict[GridCoord, Tuple[Optional[Route], str]]:
        """
        Uma busca por célula distinta contra o mesmo snapshot.
        Valor: (rota, motivo) - o motivo só importa quando a rota é None.
        """
        out: Dict[GridCoord, Tuple[Optional[Route], str]] = {}
        for c in cells:
            c = GridCoord(*c)
            if c in out:
                continue
            try:
                out[c] = (plan_route(grid, dmap, c, grid.exits, beta, raw_heuristic), "no route")
            except PlanningError as e:
                out[c] = (None, str(e))
        return out

    @staticmethod
    def run_planner(planner: str, grid: GridMap, dmap: DensityMap, src: GridCoord, beta: float) -> Optional[Route]:
        if planner == "single_pass":
            return plan_route(grid, dmap, src, grid.exits, beta)
        if planner == "repeated_astar":
            return repeated_astar(grid, dmap, src, grid.exits, beta).route
        if planner == "dijkstra":
            return dijkstra_all(grid, dmap, src, grid.exits, beta).route
        raise PlanningError("bad_planner", f"planejador desconhecido '{planner}' (use {', '.join(RoutePlanner.PLANNERS)})")


# ═══════════════════════════════════════════
# VALIDAÇÃO DE ROTA
# ═══════════════════════════════════════════

def validate_route(
    route: Route, grid: GridMap, dmap: DensityMap, beta: float, dsts: Sequence[GridCoord],
    tol: float = 1e-9,
) -> List[str]:
    """Confere os invariantes de Route independentemente da busca. Lista vazia = ok."""
    problems: List[str] = []
    if not route.cells:
        return ["rota vazia"]
    if route.cells[-1] != route.chosen_exit:
        problems.append("última célula != saída escolhida")
    if GridCoord(*route.chosen_exit) not in {GridCoord(*d) for d in dsts}:
        problems.append("saída escolhida fora da lista de destinos")
    total = 0.0
    for c in route.cells:
        if not grid.in_bounds(c) or grid.is_wall(c):
            problems.append(f"célula inválida {tuple(c)}")
    for c in route.cells[:-1]:
        if grid.in_bounds(c) and grid.is_exit(c):
            problems.append(f"rota atravessa a saída {tuple(c)}")
    for a, b in zip(route.cells, route.cells[1:]):
        if b not in {n for n, _ in grid.adjacency(a)}:
            problems.append(f"{tuple(a)} → {tuple(b)} não são vizinhos")
            continue
        total += edge_cost(a, b, dmap, beta)
    if abs(total - route.total_cost) > tol:
        problems.append(f"custo {route.total_cost} != soma das arestas {total}")
    return problems

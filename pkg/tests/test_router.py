"""
Testes do roteador A* multi-destino: custos, desempate, oráculos e propriedades da busca.
"""

import math

import numpy as np
import pytest

from app.engines.density_map import DensityMap, PopulationCounts, build_density, empty_density
from app.engines.grid_world import GridCoord, GridMap, parse_grid
from app.engines.router import (
    FrontierLists,
    PlanNode,
    PlanningError,
    Route,
    RouteCorruption,
    RoutePlanner,
    astar_single,
    dijkstra_all,
    edge_cost,
    heuristic,
    plan_route,
    repeated_astar,
    search,
    trace_path,
    validate_candidate,
    validate_route,
)

TOL = 1e-9


def _field(grid: GridMap, values: dict) -> DensityMap:
    rho = np.zeros((grid.height, grid.width))
    for (x, y), v in values.items():
        rho[y, x] = v
    rho.setflags(write=False)
    return DensityMap(grid.width, grid.height, rho, 5.0, 3, 1)


def _random_instance(rng):
    w, h = int(rng.integers(5, 51)), int(rng.integers(5, 51))
    kinds = np.where(rng.random((h, w)) < 0.25, "#", ".")
    free = [(x, y) for y in range(h) for x in range(w) if kinds[y, x] == "."]
    n_exits = int(rng.integers(1, 6))
    picks = rng.choice(len(free), size=min(n_exits + 1, len(free)), replace=False)
    exits = [free[int(i)] for i in picks[:-1]] or [free[int(picks[0])]]
    for x, y in exits:
        kinds[y, x] = "E"
    src = free[int(picks[-1])] if len(picks) > 1 else exits[0]
    grid = parse_grid("\n".join("".join(row) for row in kinds))
    counts = {}
    for _ in range(int(rng.integers(0, 40))):
        c = GridCoord(int(rng.integers(0, w)), int(rng.integers(0, h)))
        counts[c] = counts.get(c, 0) + 1
    dmap = build_density(PopulationCounts(counts), grid, 5.0, 3)
    beta = float(rng.choice([0.0, 0.3, 0.5, 1.0]))
    return grid, dmap, GridCoord(*src), beta


# ── custos ──────────────────────────────────────────────────────────────────

def test_edge_cost_examples():
    grid = parse_grid("...\n...\n..E")
    dmap = _field(grid, {(1, 0): 2.0, (1, 1): 7.0, (0, 1): 0.25})
    assert edge_cost(GridCoord(0, 0), GridCoord(1, 0), dmap, 0.5) == pytest.approx(1.5)
    assert edge_cost(GridCoord(0, 0), GridCoord(1, 1), dmap, 1.0) == pytest.approx(1.414214, abs=1e-6)
    assert edge_cost(GridCoord(0, 0), GridCoord(0, 1), dmap, 0.0) == pytest.approx(0.25)
    with pytest.raises(PlanningError):
        edge_cost(GridCoord(0, 0), GridCoord(2, 0), dmap, 0.5)


def test_heuristic_examples():
    assert heuristic(GridCoord(0, 0), GridCoord(3, 4), 1.0) == 5.0
    assert heuristic(GridCoord(0, 0), GridCoord(3, 4), 0.5) == 2.5
    assert heuristic(GridCoord(2, 2), GridCoord(2, 2), 0.3) == 0.0


# ── listas ──────────────────────────────────────────────────────────────────

def test_validate_candidate_conditions():
    lists = FrontierLists()
    dst = GridCoord(9, 9)
    assert validate_candidate(PlanNode(GridCoord(1, 1), None, dst, 1.0, 1.0), lists)

    lists.push(PlanNode(GridCoord(2, 2), None, dst, 2.0, 2.0))
    assert not validate_candidate(PlanNode(GridCoord(2, 2), None, dst, 3.0, 2.0), lists)
    assert validate_candidate(PlanNode(GridCoord(2, 2), None, dst, 1.0, 2.0), lists)

    lists.close(PlanNode(GridCoord(3, 3), None, dst, 6.0, 0.0))
    assert validate_candidate(PlanNode(GridCoord(3, 3), None, dst, 5.5, 0.0), lists)
    assert not validate_candidate(PlanNode(GridCoord(3, 3), None, dst, 6.5, 0.0), lists)


def test_frontier_skips_superseded_entries():
    lists = FrontierLists()
    dst = GridCoord(0, 0)
    lists.push(PlanNode(GridCoord(1, 1), None, dst, 5.0, 0.0))
    better = PlanNode(GridCoord(1, 1), None, dst, 2.0, 0.0)
    lists.push(better)
    lists.push(PlanNode(GridCoord(2, 2), None, dst, 3.0, 0.0))
    assert lists.pop() is better
    assert lists.pop().pos == GridCoord(2, 2)
    assert lists.pop() is None


def test_plan_node_f():
    node = PlanNode(GridCoord(0, 0), None, GridCoord(1, 1), 2.5, 1.25)
    assert node.f == 3.75


# ── rotas ───────────────────────────────────────────────────────────────────

def test_diagonal_route_on_empty_map():
    grid = parse_grid("...\n...\n..E")
    route = plan_route(grid, empty_density(grid, 5.0, 3), GridCoord(0, 0), [GridCoord(2, 2)], 1.0)
    assert route.cells == (GridCoord(0, 0), GridCoord(1, 1), GridCoord(2, 2))
    assert route.total_cost == pytest.approx(2 * math.sqrt(2), abs=1e-9)


def test_tie_break_prefers_smaller_yx():
    grid = parse_grid("..E\n...\nE..")
    route = plan_route(grid, empty_density(grid, 5.0, 3), GridCoord(0, 0),
                       [GridCoord(0, 2), GridCoord(2, 0)], 1.0)
    assert route.total_cost == pytest.approx(2.0)
    assert route.chosen_exit == GridCoord(2, 0)
    assert route.cells == (GridCoord(0, 0), GridCoord(1, 0), GridCoord(2, 0))
    again = plan_route(grid, empty_density(grid, 5.0, 3), GridCoord(0, 0),
                       [GridCoord(2, 0), GridCoord(0, 2)], 1.0)
    assert again.cells == route.cells


def test_congested_near_exit_loses_to_clear_far_exit():
    grid = parse_grid("E.....E")
    dmap = _field(grid, {(0, 0): 10.0, (1, 0): 10.0})
    route = plan_route(grid, dmap, GridCoord(2, 0), list(grid.exits), 0.5)
    # A: 2 passos, 0.5·2 + 0.5·20 = 11 ; B: 4 passos, 0.5·4 = 2
    assert route.chosen_exit == GridCoord(6, 0)
    assert route.total_cost == pytest.approx(2.0)


def test_source_on_exit_is_zero_length():
    grid = parse_grid("E..")
    route = plan_route(grid, empty_density(grid, 5.0, 3), GridCoord(0, 0), [GridCoord(0, 0)], 0.5)
    assert route.cells == (GridCoord(0, 0),)
    assert route.total_cost == 0.0


def test_unreachable_returns_none():
    grid = parse_grid("E#.\n##.\n...")
    assert plan_route(grid, empty_density(grid, 5.0, 3), GridCoord(2, 2), list(grid.exits), 0.5) is None


def test_bad_queries_raise():
    grid = parse_grid("E#.\n...")
    dmap = empty_density(grid, 5.0, 3)
    with pytest.raises(PlanningError) as exc:
        plan_route(grid, dmap, GridCoord(1, 0), list(grid.exits), 0.5)
    assert exc.value.code == "src_wall"
    with pytest.raises(PlanningError):
        plan_route(grid, dmap, GridCoord(2, 0), [], 0.5)
    with pytest.raises(PlanningError):
        plan_route(grid, dmap, GridCoord(2, 0), [GridCoord(2, 1)], 0.5)
    with pytest.raises(PlanningError):
        plan_route(grid, dmap, GridCoord(2, 0), list(grid.exits), 1.5)


def test_trace_path_examples():
    lists = FrontierLists()
    dst = GridCoord(2, 2)
    a = PlanNode(GridCoord(0, 0), None, dst, 0.0, 0.0)
    b = PlanNode(GridCoord(1, 1), a.pos, dst, 1.4, 0.0)
    lists.close(a)
    lists.close(b)
    goal = PlanNode(dst, b.pos, dst, 2.8, 0.0)
    route = trace_path(goal, lists)
    assert route.cells == (GridCoord(0, 0), GridCoord(1, 1), GridCoord(2, 2))
    assert route.total_cost == 2.8

    with pytest.raises(RouteCorruption):
        trace_path(PlanNode(dst, GridCoord(7, 7), dst, 1.0, 0.0), lists)


def test_l_shaped_route_is_valid():
    grid = parse_grid("...\n##.\nE..")
    dmap = empty_density(grid, 5.0, 3)
    route = plan_route(grid, dmap, GridCoord(0, 0), list(grid.exits), 1.0)
    assert route.cells[0] == GridCoord(0, 0)
    assert validate_route(route, grid, dmap, 1.0, grid.exits) == []


def test_validate_route_flags_problems():
    grid = parse_grid("E..")
    dmap = empty_density(grid, 5.0, 3)
    broken = Route((GridCoord(2, 0), GridCoord(0, 0)), GridCoord(0, 0), 2.0)
    assert validate_route(broken, grid, dmap, 1.0, grid.exits)
    wrong_cost = Route((GridCoord(1, 0), GridCoord(0, 0)), GridCoord(0, 0), 5.0)
    assert validate_route(wrong_cost, grid, dmap, 1.0, grid.exits)
    corridor = parse_grid(".E.E")
    through = Route(tuple(GridCoord(x, 0) for x in range(4)), GridCoord(3, 0), 3.0)
    problems = validate_route(through, corridor, empty_density(corridor, 5.0, 3), 1.0, corridor.exits)
    assert any("atravessa" in p for p in problems)


# ── oráculos e propriedades em instâncias aleatórias ────────────────────────

def test_random_instances_match_oracles():
    rng = np.random.default_rng(2024)
    economical = 0
    for _ in range(200):
        grid, dmap, src, beta = _random_instance(rng)
        res = search(grid, dmap, src, grid.exits, beta, record_f=True)
        oracle = repeated_astar(grid, dmap, src, grid.exits, beta)

        if oracle.route is None:
            assert res.route is None
        else:
            assert res.route is not None
            assert abs(res.route.total_cost - oracle.route.total_cost) <= TOL
            assert validate_route(res.route, grid, dmap, beta, grid.exits) == []
        if res.expansions <= oracle.expansions:
            economical += 1

        # fronteira monótona com heurística consistente
        assert all(b >= a - TOL for a, b in zip(res.popped_f, res.popped_f[1:]))

        if beta == 1.0:
            zero = empty_density(grid, 5.0, 3)
            sp = plan_route(grid, zero, src, grid.exits, 1.0)
            dj = dijkstra_all(grid, zero, src, grid.exits, 1.0).route
            assert (sp is None) == (dj is None)
            if sp is not None:
                assert abs(sp.total_cost - dj.total_cost) <= TOL
    assert economical >= 190


def test_dijkstra_matches_on_congested_field():
    grid = parse_grid("E.....E\n.......\n...#...")
    dmap = _field(grid, {(1, 0): 3.0, (1, 1): 3.0, (0, 1): 1.0})
    sp = plan_route(grid, dmap, GridCoord(3, 1), list(grid.exits), 0.3)
    dj = dijkstra_all(grid, dmap, GridCoord(3, 1), list(grid.exits), 0.3).route
    assert sp.total_cost == pytest.approx(dj.total_cost, abs=TOL)
    assert sp.chosen_exit == GridCoord(6, 0)


def test_density_only_cost_stops_at_first_exit_reached():
    # β = 0: h é 0 para todas as saídas; a saída da direita não pode ser atravessada
    grid = parse_grid("E.....E")
    dmap = _field(grid, {(1, 0): 1.0, (2, 0): 1.0, (3, 0): 1.0, (4, 0): 1.0})
    route = plan_route(grid, dmap, GridCoord(5, 0), list(grid.exits), 0.0)
    assert route.chosen_exit == GridCoord(6, 0)
    assert route.cells == (GridCoord(5, 0), GridCoord(6, 0))
    assert route.total_cost == 0.0
    dj = dijkstra_all(grid, dmap, GridCoord(5, 0), list(grid.exits), 0.0).route
    rep = repeated_astar(grid, dmap, GridCoord(5, 0), list(grid.exits), 0.0).route
    assert dj.total_cost == pytest.approx(route.total_cost, abs=TOL)
    assert rep.total_cost == pytest.approx(route.total_cost, abs=TOL)


def test_density_only_cost_matches_oracles_with_several_exits():
    grid = parse_grid("E.......\n..#.....\n.......E\n...#....\nE......E")
    dmap = _field(grid, {(1, 0): 2.0, (1, 1): 2.0, (0, 1): 2.0, (6, 2): 0.5, (1, 3): 0.2})
    for src in [GridCoord(4, 2), GridCoord(2, 0), GridCoord(5, 4), GridCoord(6, 1)]:
        sp = plan_route(grid, dmap, src, list(grid.exits), 0.0)
        dj = dijkstra_all(grid, dmap, src, list(grid.exits), 0.0).route
        assert sp.total_cost == pytest.approx(dj.total_cost, abs=TOL)
        assert validate_route(sp, grid, dmap, 0.0, grid.exits) == []


def test_astar_single_per_exit():
    grid = parse_grid("E...E")
    dmap = empty_density(grid, 5.0, 3)
    left = astar_single(grid, dmap, GridCoord(1, 0), GridCoord(0, 0), 1.0)
    right = astar_single(grid, dmap, GridCoord(1, 0), GridCoord(4, 0), 1.0)
    assert left.route.total_cost == 1.0
    assert right.route.total_cost == 3.0


def test_raw_heuristic_mode_runs():
    grid = parse_grid("E.....E")
    dmap = _field(grid, {(0, 0): 10.0, (1, 0): 10.0})
    route = plan_route(grid, dmap, GridCoord(2, 0), list(grid.exits), 0.5, raw_heuristic=True)
    assert route is not None
    assert route.cells[0] == GridCoord(2, 0)


def test_deterministic():
    rng = np.random.default_rng(11)
    grid, dmap, src, beta = _random_instance(rng)
    first = plan_route(grid, dmap, src, grid.exits, beta)
    for _ in range(3):
        assert plan_route(grid, dmap, src, grid.exits, beta) == first


def test_plan_cells_one_entry_per_distinct_cell():
    grid = parse_grid("E#.\n##.\n..E")
    dmap = empty_density(grid, 5.0, 3)
    planned = RoutePlanner.plan_cells(grid, dmap, [(2, 0), (2, 0), GridCoord(1, 0), GridCoord(0, 0)], 0.5)
    assert set(planned) == {GridCoord(2, 0), GridCoord(1, 0), GridCoord(0, 0)}
    route, _ = planned[GridCoord(2, 0)]
    assert route.chosen_exit == GridCoord(2, 2)
    wall, why = planned[GridCoord(1, 0)]
    assert wall is None
    assert "parede" in why
    assert planned[GridCoord(0, 0)][0].cells == (GridCoord(0, 0),)


def test_run_planner_agrees_across_planners():
    grid = parse_grid("E.....E\n.......\n...#...")
    dmap = _field(grid, {(1, 0): 3.0, (1, 1): 3.0, (0, 1): 1.0})
    costs = [RoutePlanner.run_planner(p, grid, dmap, GridCoord(3, 1), 0.3).total_cost for p in RoutePlanner.PLANNERS]
    assert max(costs) - min(costs) <= TOL
    with pytest.raises(PlanningError) as exc:
        RoutePlanner.run_planner("bfs", grid, dmap, GridCoord(3, 1), 0.3)
    assert exc.value.code == "bad_planner"

"""
Testes do serviço de dispatch: mestre, round-robin, backpressure e pool de workers.
"""

import pytest

from app.engines.density_map import query_density
from app.engines.grid_world import GridCoord, parse_grid
from app.execution.dispatch import (
    ERR_NO_ROUTE,
    ERR_OVERLOADED,
    ERR_SUPERSEDED,
    DispatchError,
    MasterState,
    PlannerPool,
    PositionRejected,
    RouteRequest,
    RouteResponse,
    apply_backpressure,
    assign,
    ingest_position,
    make_request,
    plan_queries,
    planning_context,
    publish_due,
    publish_snapshot,
    record_results,
    remove_user,
    serve_queries,
)

# região da direita (x ≥ 5) isolada por parede
SPLIT = "E...#..\n....#..\n....#.."


def _open_state(w: int = 21, h: int = 21, **kw) -> MasterState:
    rows = ["." * w for _ in range(h)]
    rows[0] = "E" + rows[0][1:]
    rows[-1] = rows[-1][:-1] + "E"
    return MasterState(grid=parse_grid("\n".join(rows)), gamma=5.0, patch_radius=3, beta=0.5, **kw)


def _requests(n: int):
    return [RouteRequest(user_id=i, src=(0.5, 0.5), requested_at=0) for i in range(n)]


def _crowd(state: MasterState, n: int = 40):
    for uid in range(n):
        x = 0.5 + (uid * 7) % state.grid.width
        y = 0.5 + (uid * 3) % state.grid.height
        ingest_position(state, uid, (x, y))
    publish_snapshot(state)
    return [make_request(state, uid) for uid in range(n)]


# ── mestre ──────────────────────────────────────────────────────────────────

def test_ingest_is_upsert():
    state = _open_state()
    ingest_position(state, 7, (1.0, 1.0))
    ingest_position(state, 7, (2.5, 3.5))
    assert state.positions == {7: (2.5, 3.5)}
    assert state.dirty


def test_ingest_rejects_out_of_bounds():
    state = _open_state()
    with pytest.raises(PositionRejected) as exc:
        ingest_position(state, 1, (-0.1, 2.0))
    assert exc.value.status == 422
    with pytest.raises(PositionRejected):
        ingest_position(state, 1, (21.0, 2.0))
    assert state.positions == {}


def test_publish_builds_field_and_bumps_version():
    state = _open_state()
    ingest_position(state, 1, (10.5, 10.5))
    snap = publish_snapshot(state)
    assert snap.version == 1
    assert not state.dirty
    assert abs(query_density(snap, GridCoord(10, 10)) - 1.994711) < 1e-6

    ingest_position(state, 2, (10.5, 10.5))
    snap2 = publish_snapshot(state)
    assert snap2.version == 2
    assert abs(query_density(snap2, GridCoord(10, 10)) - 2 * 1.994711) < 1e-5
    # o snapshot anterior não muda
    assert abs(query_density(snap, GridCoord(10, 10)) - 1.994711) < 1e-6


def test_publish_due():
    state = _open_state()
    assert publish_due(state)
    publish_snapshot(state)
    assert not publish_due(state)
    ingest_position(state, 1, (1.5, 1.5))
    assert not publish_due(state, republish_ms=100, now=state.last_publish + 0.01)
    assert publish_due(state, republish_ms=100, now=state.last_publish + 0.2)


def test_make_request_requires_position():
    state = _open_state()
    with pytest.raises(DispatchError) as exc:
        make_request(state, 99)
    assert exc.value.code == "no_position"


def test_remove_user():
    state = _open_state()
    ingest_position(state, 3, (1.5, 1.5))
    publish_snapshot(state)
    assert remove_user(state, 3)
    assert state.dirty
    assert not remove_user(state, 3)


# ── round-robin ─────────────────────────────────────────────────────────────

def test_assign_round_robin():
    reqs = _requests(5)
    queues = assign(reqs, 2)
    assert [len(q) for q in queues] == [3, 2]
    assert [r.user_id for r in queues[0]] == [0, 2, 4]
    assert [r.user_id for r in queues[1]] == [1, 3]

    assert [len(q) for q in assign(_requests(4), 4)] == [1, 1, 1, 1]
    assert assign([], 3) == [[], [], []]


def test_assign_rejects_zero_workers():
    with pytest.raises(DispatchError) as exc:
        assign(_requests(2), 0)
    assert exc.value.code == "bad_workers"


# ── backpressure ────────────────────────────────────────────────────────────

def test_backpressure_sheds_duplicates_first():
    reqs = [RouteRequest(uid, (0.5, 0.5), 0) for uid in (1, 2, 1, 3, 1)]
    admitted, early = apply_backpressure(reqs, workers=1, bound=3, version=4)
    assert [r.user_id for r in admitted] == [2, 3, 1]
    assert sorted(early) == [0, 2]
    assert all(e.code == ERR_SUPERSEDED and e.version == 4 for e in early.values())


def test_backpressure_rejects_newest_overflow():
    admitted, early = apply_backpressure(_requests(5), workers=2, bound=2, version=1)
    assert [r.user_id for r in admitted] == [0, 1, 2, 3]
    assert list(early) == [4]
    assert early[4].code == ERR_OVERLOADED


def test_backpressure_noop_under_capacity():
    admitted, early = apply_backpressure(_requests(3), workers=2, bound=2, version=1)
    assert len(admitted) == 3
    assert early == {}


# ── atendimento ─────────────────────────────────────────────────────────────

def test_serve_requires_snapshot():
    state = _open_state()
    with pytest.raises(DispatchError) as exc:
        serve_queries(state, [])
    assert exc.value.code == "no_snapshot"


def test_serve_order_and_results():
    state = _open_state()
    reqs = _crowd(state, 12)
    out = serve_queries(state, reqs, workers=3)
    assert [r.user_id for r in out] == list(range(12))
    assert all(r.ok and r.version == state.version for r in out)
    assert set(state.results) == set(range(12))
    for r in out:
        assert r.route.chosen_exit in state.grid.exits
        assert r.route.cells[0] == state.grid.world_to_cell(*state.positions[r.user_id])


def test_same_cell_users_share_route():
    state = _open_state()
    ingest_position(state, 1, (5.2, 5.2))
    ingest_position(state, 2, (5.8, 5.9))
    publish_snapshot(state)
    a, b = serve_queries(state, [make_request(state, 1), make_request(state, 2)])
    assert a.route == b.route


def test_serve_identical_for_any_worker_count():
    state = _open_state()
    reqs = _crowd(state, 40)
    serial = [r.to_dict() for r in serve_queries(state, reqs, workers=1)]
    with PlannerPool(state.grid, workers=8, backend="thread", beta=state.beta) as pool:
        pooled = [r.to_dict() for r in serve_queries(state, reqs, pool=pool)]
    assert pooled == serial


def test_unreachable_user_gets_404_without_affecting_others():
    state = MasterState(grid=parse_grid(SPLIT), gamma=5.0, patch_radius=3, beta=0.5)
    ingest_position(state, 1, (1.5, 1.5))
    ingest_position(state, 2, (5.5, 0.5))
    ingest_position(state, 3, (4.5, 1.5))  # parede
    ingest_position(state, 4, (2.5, 2.5))
    publish_snapshot(state)
    out = serve_queries(state, [make_request(state, uid) for uid in (1, 2, 3, 4)], workers=2)
    assert [r.ok for r in out] == [True, False, False, True]
    assert out[1].code == ERR_NO_ROUTE
    assert out[2].code == ERR_NO_ROUTE
    assert out[3].route.chosen_exit == GridCoord(0, 0)


def test_serve_applies_backpressure():
    state = _open_state(queue_bound=2)
    reqs = _crowd(state, 6)
    out = serve_queries(state, reqs, workers=2)
    assert [r.ok for r in out] == [True, True, True, True, False, False]
    assert [r.code for r in out[4:]] == [ERR_OVERLOADED, ERR_OVERLOADED]
    # filas do último lote: 4 admitidos em round-robin
    assert [len(q) for q in state.queues] == [2, 2]


def test_route_response_dict():
    state = _open_state()
    reqs = _crowd(state, 1)
    ok = serve_queries(state, reqs)[0].to_dict()
    assert set(ok) == {"user_id", "version", "cells", "exit", "cost"}
    err = RouteResponse.error(5, 3, ERR_NO_ROUTE, "no route").to_dict()
    assert err == {"user_id": 5, "version": 3, "code": 404, "message": "no route"}


# ── pool ────────────────────────────────────────────────────────────────────

def test_pool_rejects_bad_arguments():
    grid = parse_grid("E..")
    with pytest.raises(DispatchError):
        PlannerPool(grid, workers=0, backend="thread")
    with pytest.raises(DispatchError) as exc:
        PlannerPool(grid, workers=1, backend="gpu")
    assert exc.value.code == "bad_backend"


def test_process_pool_matches_serial():
    state = _open_state(15, 15)
    reqs = _crowd(state, 20)
    serial = [r.to_dict() for r in serve_queries(state, reqs, workers=1)]
    with PlannerPool(state.grid, workers=2, backend="process", beta=state.beta) as pool:
        pool.warm_up()
        pooled = [r.to_dict() for r in serve_queries(state, reqs, pool=pool)]
    assert pooled == serial


def test_publish_notifies_listeners():
    state = _open_state()
    seen = []
    state.listeners.append(lambda snap: seen.append(snap.version))
    publish_snapshot(state)
    ingest_position(state, 1, (3.5, 3.5))
    publish_snapshot(state)
    assert seen == [1, 2]


def test_failing_listener_does_not_block_publish():
    state = _open_state()

    def broken(snap):
        raise RuntimeError("boom")

    seen = []
    state.listeners.extend([broken, lambda snap: seen.append(snap.version)])
    snap = publish_snapshot(state)
    assert snap.version == 1
    assert seen == [1]


def test_planning_leaves_master_untouched():
    state = _open_state()
    reqs = _crowd(state, 10)
    ctx = planning_context(state)
    outcome = plan_queries(ctx, reqs, workers=3)
    assert len(outcome.responses) == 10
    assert state.results == {}
    assert state.queues == []
    record_results(state, outcome)
    assert set(state.results) == set(range(10))
    assert [len(q) for q in state.queues] == [4, 3, 3]


def test_user_leaving_mid_batch_gets_no_stored_result():
    state = _open_state()
    reqs = _crowd(state, 3)
    outcome = plan_queries(planning_context(state), reqs)
    remove_user(state, 1)
    responses = record_results(state, outcome)
    assert [r.user_id for r in responses] == [0, 1, 2]
    assert state.positions.keys() == {0, 2}
    assert set(state.results) == {0, 2}


def test_planning_uses_snapshot_taken_at_request_time():
    state = _open_state()
    reqs = _crowd(state, 4)
    ctx = planning_context(state)
    ingest_position(state, 99, (10.5, 10.5))
    publish_snapshot(state)
    outcome = plan_queries(ctx, reqs)
    assert {r.version for r in outcome.responses} == {ctx.snapshot.version}
    assert state.version == ctx.snapshot.version + 1


def test_planning_context_needs_snapshot():
    with pytest.raises(DispatchError):
        planning_context(_open_state())

"""
Dispatch - Serviço de planejamento paralelo e assíncrono

Mestre único (MasterState) guarda as posições dos usuários e publica
snapshots versionados do mapa de densidade. Pedidos de rota são
distribuídos em round-robin para W filas; cada fila vira um job que roda
plan_route contra o snapshot amarrado no momento da distribuição.

Fluxo de um lote:
  ingest_position (N vezes) → publish_snapshot → serve_queries
      serve_queries = planning_context → plan_queries → record_results
      plan_queries  = backpressure → assign → PlannerPool.run → respostas

Só o dono do MasterState (o loop, ou o chamador síncrono) escreve nele.
plan_queries não toca no estado: roda sobre um PlanContext imutável e pode
ir para um executor; record_results aplica o lote de volta no mestre.
publish_snapshot avisa os ouvintes registrados (ex.: assinantes DMAP).

Códigos de erro das respostas:
  400 parse | 404 sem rota | 409 pedido duplicado descartado
  412 usuário sem posição | 422 posição fora do mapa | 503 sobrecarga (retentável)

Backends do pool:
  "process" - ProcessPoolExecutor; o mapa vai uma vez para cada worker
              no initializer, cada job leva só a fila e o snapshot.
  "thread"  - ThreadPoolExecutor; sem custo de arranque, sem ganho de
              paralelismo no CPython (útil para testes e cargas leves).
"""

import logging
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from app.core.config import settings
from app.engines.density_map import DensityField, DensityMap
from app.engines.grid_world import GridMap
from app.engines.router import Route, RoutePlanner

log = logging.getLogger("dispatch")

ERR_PARSE = 400
ERR_NO_ROUTE = 404
ERR_SUPERSEDED = 409
ERR_NO_POSITION = 412
ERR_OUT_OF_BOUNDS = 422
ERR_OVERLOADED = 503

BACKENDS = ("process", "thread")


class DispatchError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class PositionRejected(DispatchError):
    def __init__(self, user_id: int, pos):
        super().__init__("out_of_bounds", f"usuário {user_id}: posição {tuple(pos)} fora do mapa")
        self.user_id = user_id
        self.status = ERR_OUT_OF_BOUNDS


# ═══════════════════════════════════════════
# TIPOS
# ═══════════════════════════════════════════

@dataclass(frozen=True)
class RouteRequest:
    user_id: int
    src: Tuple[float, float]
    requested_at: int


@dataclass(frozen=True)
class RouteResponse:
    user_id: int
    version: int
    route: Optional[Route] = None
    code: int = 0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.route is not None

    @classmethod
    def error(cls, user_id: int, version: int, code: int, message: str) -> "RouteResponse":
        return cls(user_id=user_id, version=version, route=None, code=code, message=message)

    def to_dict(self) -> dict:
        if self.ok:
            return {
                "user_id": self.user_id,
                "version": self.version,
                "cells": [[c[0], c[1]] for c in self.route.cells],
                "exit": list(self.route.chosen_exit),
                "cost": round(self.route.total_cost, 6),
            }
        return {"user_id": self.user_id, "version": self.version, "code": self.code, "message": self.message}


@dataclass
class MasterState:
    grid: GridMap
    gamma: float = settings.GAMMA
    patch_radius: int = settings.PATCH_RADIUS
    beta: float = settings.BETA
    raw_heuristic: bool = settings.RAW_HEURISTIC
    queue_bound: int = settings.QUEUE_BOUND
    positions: Dict[int, Tuple[float, float]] = field(default_factory=dict)
    snapshot: Optional[DensityMap] = None
    version: int = 0
    dirty: bool = True
    last_publish: float = 0.0
    queues: List[List[RouteRequest]] = field(default_factory=list)  # filas do último lote
    results: Dict[int, Tuple[Route, int]] = field(default_factory=dict)
    listeners: List[Callable[[DensityMap], None]] = field(default_factory=list, repr=False)

    def status(self) -> dict:
        return {
            "users": len(self.positions),
            "version": self.version,
            "dirty": self.dirty,
            "results": len(self.results),
            "map": self.grid.name,
        }


# ═══════════════════════════════════════════
# ESTADO DO MESTRE
# ═══════════════════════════════════════════

def ingest_position(state: MasterState, user_id: int, pos: Sequence[float]) -> MasterState:
    x, y = float(pos[0]), float(pos[1])
    if not state.grid.contains_world(x, y):
        raise PositionRejected(user_id, (x, y))
    state.positions[int(user_id)] = (x, y)
    state.dirty = True
    return state


def remove_user(state: MasterState, user_id: int) -> bool:
    existed = state.positions.pop(int(user_id), None) is not None
    state.results.pop(int(user_id), None)
    if existed:
        state.dirty = True
    return existed


def publish_snapshot(state: MasterState) -> DensityMap:
    """Reconstrói o campo com todas as posições atuais (versão +1). Snapshots antigos seguem válidos."""
    state.version += 1
    state.snapshot = DensityField.from_positions(
        state.positions.values(), state.grid, state.gamma, state.patch_radius, version=state.version
    )
    state.dirty = False
    state.last_publish = time.monotonic()
    log.debug(f"snapshot v{state.version} publicado ({len(state.positions)} usuários)")
    for listener in list(state.listeners):
        try:
            listener(state.snapshot)
        except Exception as e:
            log.error(f"ouvinte de snapshot falhou: {e}")
    return state.snapshot


def publish_due(state: MasterState, republish_ms: float = settings.REPUBLISH_MS, now: Optional[float] = None) -> bool:
    """Republica só se houve mudança e já passou o intervalo mínimo (ou se nunca publicou)."""
    if state.snapshot is None:
        return True
    if not state.dirty:
        return False
    now = time.monotonic() if now is None else now
    return (now - state.last_publish) * 1000.0 >= republish_ms


def make_request(state: MasterState, user_id: int) -> RouteRequest:
    pos = state.positions.get(int(user_id))
    if pos is None:
        raise DispatchError("no_position", f"usuário {user_id} sem posição registrada")
    return RouteRequest(user_id=int(user_id), src=pos, requested_at=state.version)


# ═══════════════════════════════════════════
# DISTRIBUIÇÃO
# ═══════════════════════════════════════════

def assign(requests: Sequence[RouteRequest], workers: int) -> List[List[RouteRequest]]:
    """Round-robin pela ordem de chegada; tamanhos das filas diferem no máximo em 1."""
    if workers < 1:
        raise DispatchError("bad_workers", f"W deve ser ≥ 1 (recebido {workers})")
    queues: List[List[RouteRequest]] = [[] for _ in range(workers)]
    for i, req in enumerate(requests):
        queues[i % workers].append(req)
    return queues


def apply_backpressure(
    requests: Sequence[RouteRequest],
    workers: int,
    bound: int,
    version: int,
) -> Tuple[List[RouteRequest], Dict[int, RouteResponse]]:
    """
    Capacidade = workers · bound. Acima disso descarta primeiro os pedidos
    duplicados mais antigos de cada usuário (409) e depois rejeita o
    excedente mais novo (503). Devolve (admitidos, {índice: resposta}).
    """
    capacity = workers * bound
    if len(requests) <= capacity:
        return list(requests), {}

    latest = {r.user_id: i for i, r in enumerate(requests)}
    excess = len(requests) - capacity
    early: Dict[int, RouteResponse] = {}
    kept: List[Tuple[int, RouteRequest]] = []
    for i, r in enumerate(requests):
        if excess > 0 and latest[r.user_id] != i:
            early[i] = RouteResponse.error(r.user_id, version, ERR_SUPERSEDED, "superseded")
            excess -= 1
        else:
            kept.append((i, r))

    for i, r in kept[capacity:]:
        early[i] = RouteResponse.error(r.user_id, version, ERR_OVERLOADED, "overloaded")
    kept = kept[:capacity]
    log.warning(f"backpressure: {len(early)} pedidos descartados (capacidade {capacity})")
    return [r for _, r in kept], early


def _plan_queue_with(
    grid: GridMap,
    beta: float,
    raw_heuristic: bool,
    queue: Sequence[RouteRequest],
    snapshot: DensityMap,
) -> List[RouteResponse]:
    """Executa uma fila inteira contra um único snapshot; rota memorizada por célula."""
    cells = [grid.world_to_cell(*req.src) for req in queue]
    memo = RoutePlanner.plan_cells(grid, snapshot, cells, beta, raw_heuristic)
    out: List[RouteResponse] = []
    for req, cell in zip(queue, cells):
        route, why = memo[cell]
        if route is None:
            out.append(RouteResponse.error(req.user_id, snapshot.version, ERR_NO_ROUTE, why))
        else:
            out.append(RouteResponse(user_id=req.user_id, version=snapshot.version, route=route))
    return out


# ── Worker de processo: o mapa fica num global do processo filho ─────────────

_WORKER: dict = {}


def _init_worker(grid: GridMap, beta: float, raw_heuristic: bool) -> None:
    _WORKER["grid"] = grid
    _WORKER["beta"] = beta
    _WORKER["raw"] = raw_heuristic


def _plan_queue_job(queue: Sequence[RouteRequest], snapshot: DensityMap) -> List[RouteResponse]:
    return _plan_queue_with(_WORKER["grid"], _WORKER["beta"], _WORKER["raw"], queue, snapshot)


class PlannerPool:
    """W workers de vida longa. Use como context manager ou chame close()."""

    def __init__(
        self,
        grid: GridMap,
        workers: int = settings.WORKERS,
        backend: str = settings.WORKER_BACKEND,
        beta: float = settings.BETA,
        raw_heuristic: bool = settings.RAW_HEURISTIC,
    ):
        if workers < 1:
            raise DispatchError("bad_workers", f"W deve ser ≥ 1 (recebido {workers})")
        if backend not in BACKENDS:
            raise DispatchError("bad_backend", f"backend desconhecido '{backend}' (use {', '.join(BACKENDS)})")
        self.grid = grid
        self.workers = workers
        self.backend = backend
        self.beta = beta
        self.raw_heuristic = raw_heuristic
        self._executor: Executor
        if backend == "process":
            self._executor = ProcessPoolExecutor(
                max_workers=workers,
                initializer=_init_worker,
                initargs=(grid, beta, raw_heuristic),
            )
        else:
            self._executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="planner")
        log.info(f"PlannerPool: {workers} workers ({backend})")

    def _submit(self, queue: Sequence[RouteRequest], snapshot: DensityMap):
        if self.backend == "process":
            return self._executor.submit(_plan_queue_job, list(queue), snapshot)
        return self._executor.submit(_plan_queue_with, self.grid, self.beta, self.raw_heuristic, queue, snapshot)

    def warm_up(self) -> None:
        """Força o arranque de todos os workers (fora de qualquer medição)."""
        if self.grid.exits:
            src = self.grid.cell_center(self.grid.exits[0])
            warm = [RouteRequest(-1, src, 0)]
            snap = DensityField.flat(self.grid)
            for fut in [self._submit(warm, snap) for _ in range(self.workers)]:
                fut.result()

    def run(self, queues: Sequence[Sequence[RouteRequest]], snapshot: DensityMap) -> List[List[RouteResponse]]:
        """Um job por fila não vazia; resultados voltam na ordem de conclusão e são reposicionados por fila."""
        results: List[List[RouteResponse]] = [[] for _ in queues]
        futures = {self._submit(q, snapshot): qi for qi, q in enumerate(queues) if q}
        for fut in as_completed(futures):
            results[futures[fut]] = fut.result()
        return results

    def close(self) -> None:
        self._executor.shutdown(wait=True)

    def __enter__(self) -> "PlannerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ═══════════════════════════════════════════
# ATENDIMENTO
# ═══════════════════════════════════════════

@dataclass(frozen=True)
class PlanContext:
    """O que um lote precisa do mestre, congelado no momento do pedido."""

    grid: GridMap
    snapshot: DensityMap
    beta: float
    raw_heuristic: bool
    queue_bound: int


@dataclass(frozen=True)
class PlanOutcome:
    responses: List[RouteResponse]
    queues: List[List[RouteRequest]]


def planning_context(state: MasterState) -> PlanContext:
    if state.snapshot is None:
        raise DispatchError("no_snapshot", "nenhum snapshot publicado ainda")
    return PlanContext(state.grid, state.snapshot, state.beta, state.raw_heuristic, state.queue_bound)


def plan_queries(
    ctx: PlanContext,
    requests: Sequence[RouteRequest],
    workers: Optional[int] = None,
    pool: Optional[PlannerPool] = None,
) -> PlanOutcome:
    """
    Uma resposta por pedido, na ordem dos pedidos. Sem pool, as filas rodam
    em série no thread atual (mesmo resultado de qualquer W).
    Não escreve no MasterState; pode rodar fora do loop.
    """
    snapshot = ctx.snapshot
    w = pool.workers if pool is not None else (workers if workers is not None else 1)
    if w < 1:
        raise DispatchError("bad_workers", f"W deve ser ≥ 1 (recebido {w})")

    admitted, early = apply_backpressure(requests, w, ctx.queue_bound, snapshot.version)
    queues = assign(admitted, w)

    if pool is not None:
        per_queue = pool.run(queues, snapshot)
    else:
        per_queue = [_plan_queue_with(ctx.grid, ctx.beta, ctx.raw_heuristic, q, snapshot) for q in queues]

    # pedido admitido k foi para a fila k % w, posição k // w
    served = iter(per_queue[k % w][k // w] for k in range(len(admitted)))
    out = [early[i] if i in early else next(served) for i in range(len(requests))]
    return PlanOutcome(out, queues)


def record_results(state: MasterState, outcome: PlanOutcome) -> List[RouteResponse]:
    """Aplica o lote no mestre. Usuário que saiu durante o lote não ganha resultado."""
    state.queues = outcome.queues
    for resp in outcome.responses:
        if resp.ok and resp.user_id in state.positions:
            state.results[resp.user_id] = (resp.route, resp.version)
    return outcome.responses


def serve_queries(
    state: MasterState,
    requests: Sequence[RouteRequest],
    workers: Optional[int] = None,
    pool: Optional[PlannerPool] = None,
) -> List[RouteResponse]:
    """Lote completo no thread do chamador: contexto, planejamento e registro."""
    outcome = plan_queries(planning_context(state), requests, workers, pool)
    return record_results(state, outcome)

"""
Aplicação FastAPI principal - Evac Router

Espelha o serviço de dispatch em HTTP e, no mesmo loop, sobe o servidor
TCP de protocolo de linhas. As duas superfícies compartilham um único
MasterState (mestre único: posições e snapshots de densidade).
"""

# Carrega variáveis do arquivo .env antes de qualquer import de configuração
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

import asyncio
import logging
from contextlib import asynccontextmanager
from datetime import datetime, timezone
from typing import List, Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse
from starlette.responses import JSONResponse

from app import db_state
from app.core.config import settings
from app.core.log import setup_logging
from app.engines.grid_world import GridMap, MapError, load_grid
from app.execution.dispatch import (
    ERR_NO_POSITION,
    ERR_OUT_OF_BOUNDS,
    DispatchError,
    MasterState,
    PlannerPool,
    PositionRejected,
    RouteRequest,
    RouteResponse,
    ingest_position,
    make_request,
    plan_queries,
    planning_context,
    publish_due,
    publish_snapshot,
    record_results,
)
from app.execution.line_server import LineServer
from app.reports import render_heatmap_csv
from app.schemas.schemas import (
    PlanRequest,
    PlanResponse,
    PositionBatch,
    PositionBatchResult,
    PositionResult,
    RouteOut,
    ServiceStatus,
)

log = logging.getLogger("api")

# ═══════════════════════════════════════════
# RATE LIMITING
# ═══════════════════════════════════════════

try:
    from slowapi import Limiter
    from slowapi.errors import RateLimitExceeded
    from slowapi.middleware import SlowAPIMiddleware
    from slowapi.util import get_remote_address
    _limiter = Limiter(key_func=get_remote_address, default_limits=[settings.RATE_LIMIT])
    RATE_LIMIT_AVAILABLE = True
except ImportError:
    _limiter = None
    RATE_LIMIT_AVAILABLE = False
    print("[api] ⚠️  slowapi não instalado - rate limiting desativado. pip install slowapi", flush=True)


# ═══════════════════════════════════════════
# ESTADO DO SERVIÇO
# ═══════════════════════════════════════════

_service: dict = {"state": None, "pool": None, "tcp": None}


def _state() -> MasterState:
    state = _service["state"]
    if state is None:
        raise HTTPException(status_code=503, detail="Serviço ainda não inicializado.")
    return state


def build_service(grid: Optional[GridMap] = None) -> MasterState:
    """Cria MasterState + PlannerPool a partir das configurações atuais."""
    if grid is None:
        grid = load_grid(settings.MAP_FILE, settings.GRID_CONNECTIVITY)
    state = MasterState(
        grid=grid,
        gamma=settings.GAMMA,
        patch_radius=settings.PATCH_RADIUS,
        beta=settings.BETA,
        raw_heuristic=settings.RAW_HEURISTIC,
        queue_bound=settings.QUEUE_BOUND,
    )
    _service["state"] = state
    _service["pool"] = PlannerPool(
        grid,
        workers=settings.WORKERS,
        backend=settings.WORKER_BACKEND,
        beta=settings.BETA,
        raw_heuristic=settings.RAW_HEURISTIC,
    )
    publish_snapshot(state)
    return state


@asynccontextmanager
async def lifespan(app: FastAPI):
    setup_logging()
    try:
        build_service()
    except (MapError, OSError) as e:
        print(f"[lifespan] ❌ mapa '{settings.MAP_FILE}' inválido: {e}", flush=True)
        raise
    state = _service["state"]
    print(f"[lifespan] mapa '{state.grid.name}' {state.grid.width}x{state.grid.height}, "
          f"{len(state.grid.exits)} células de saída, W={settings.WORKERS} ({settings.WORKER_BACKEND})", flush=True)
    if settings.SERVE_TCP:
        _service["tcp"] = await LineServer(state, _service["pool"]).start(settings.TCP_HOST, settings.TCP_PORT)
        print(f"[lifespan] protocolo de linhas em {settings.TCP_HOST}:{_service['tcp'].port}", flush=True)
    yield
    # Shutdown
    if _service["tcp"] is not None:
        await _service["tcp"].stop()
    if _service["pool"] is not None:
        _service["pool"].close()
    _service.update(state=None, pool=None, tcp=None)
    print("[lifespan] serviço encerrado", flush=True)


app = FastAPI(
    title=settings.APP_NAME,
    version=settings.APP_VERSION,
    description="Roteamento de evacuação com consciência de congestionamento",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:8000", "http://127.0.0.1:8000"],
    allow_methods=["GET", "POST"],
    allow_headers=["Content-Type"],
)

if RATE_LIMIT_AVAILABLE and _limiter:
    app.state.limiter = _limiter
    app.add_middleware(SlowAPIMiddleware)

    @app.exception_handler(RateLimitExceeded)
    async def _rate_limit_handler(request: Request, exc: RateLimitExceeded):
        return JSONResponse(
            status_code=429,
            content={"detail": "Rate limit excedido. Tente novamente em breve."},
        )


# ═══════════════════════════════════════════
# ENDPOINTS
# ═══════════════════════════════════════════

@app.get("/health")
async def health_check():
    """Health check para monitoramento externo."""
    state = _service["state"]
    return {
        "status": "ok" if state is not None else "starting",
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "version": state.version if state is not None else 0,
        "tcp": _service["tcp"] is not None,
        "persistence": db_state.storage_info(),
    }


@app.get("/status", response_model=ServiceStatus)
async def service_status():
    state = _state()
    pool: PlannerPool = _service["pool"]
    return ServiceStatus(
        **state.status(),
        width=state.grid.width,
        height=state.grid.height,
        exits=len(state.grid.exits),
        workers=pool.workers,
        backend=pool.backend,
    )


@app.post("/positions", response_model=PositionBatchResult)
async def post_positions(batch: PositionBatch):
    """Upsert de posições (metros). Cada entrada é aceita ou rejeitada isoladamente."""
    state = _state()
    results: List[PositionResult] = []
    for p in batch.positions:
        try:
            ingest_position(state, p.user_id, (p.x, p.y))
            results.append(PositionResult(user_id=p.user_id, accepted=True))
        except PositionRejected as e:
            results.append(PositionResult(user_id=p.user_id, accepted=False, code=ERR_OUT_OF_BOUNDS, message=str(e)))
    accepted = sum(1 for r in results if r.accepted)
    return PositionBatchResult(accepted=accepted, rejected=len(results) - accepted, results=results)


@app.post("/plan", response_model=PlanResponse)
async def post_plan(body: PlanRequest):
    """Publica o snapshot se estiver vencido e atende os pedidos em lote no pool."""
    state = _state()
    if publish_due(state, settings.REPUBLISH_MS):
        publish_snapshot(state)

    requests: List[RouteRequest] = []
    missing: dict = {}
    for i, uid in enumerate(body.user_ids):
        try:
            requests.append(make_request(state, uid))
        except DispatchError:
            missing[i] = RouteResponse.error(uid, state.version, ERR_NO_POSITION, "no position")

    try:
        ctx = planning_context(state)
        loop = asyncio.get_running_loop()
        outcome = await loop.run_in_executor(None, plan_queries, ctx, requests, None, _service["pool"])
        served = record_results(state, outcome)
    except DispatchError as e:
        raise HTTPException(status_code=409, detail=str(e))

    it = iter(served)
    routes = [RouteOut(**(missing[i] if i in missing else next(it)).to_dict()) for i in range(len(body.user_ids))]
    return PlanResponse(version=ctx.snapshot.version, routes=routes)


@app.get("/dmap.csv", response_class=PlainTextResponse)
async def density_csv():
    state = _state()
    if publish_due(state, settings.REPUBLISH_MS):
        publish_snapshot(state)
    return PlainTextResponse(render_heatmap_csv(state.snapshot), media_type="text/csv")


@app.get("/runs/last")
async def last_run():
    record = db_state.load_state("last_run", {})
    if not record:
        raise HTTPException(status_code=404, detail="Nenhum experimento registrado ainda.")
    return record

"""
Servidor TCP de protocolo de linhas (UTF-8, uma mensagem por linha)

cliente → servidor:
  POS <user_id> <x> <y>     posição em metros (upsert, sem resposta)
  PLAN <user_id>            pede rota; responde ROUTE ou ERR
  BYE <user_id>             remove o usuário
  SUB DMAP                  passa a receber "DMAP <versão>" a cada publicação

servidor → cliente:
  ROUTE <user_id> <versão> <n> <x1> <y1> ... <xn> <yn>
  ERR <user_id> <código> <mensagem>
  DMAP <versão>

Linha malformada → "ERR 0 400 parse".

Os PLAN são acumulados numa janela curta (BATCH_WINDOW_MS) e atendidos em
lote: publica o snapshot se estiver vencido, roda plan_queries num executor
para não travar o loop e registra os resultados de volta no próprio loop.
Toda publicação do MasterState (inclusive as feitas pela API HTTP) vira
"DMAP <versão>" para os assinantes.
"""

import asyncio
import logging
from dataclasses import dataclass
from typing import List, Optional, Set, Tuple

from app.core.config import settings
from app.execution.dispatch import (
    ERR_NO_POSITION,
    ERR_OUT_OF_BOUNDS,
    ERR_PARSE,
    DispatchError,
    MasterState,
    PlannerPool,
    PositionRejected,
    RouteResponse,
    ingest_position,
    make_request,
    plan_queries,
    planning_context,
    publish_due,
    publish_snapshot,
    record_results,
    remove_user,
)

log = logging.getLogger("server")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Command:
    verb: str
    user_id: int = 0
    x: float = 0.0
    y: float = 0.0


# ── Codec ────────────────────────────────────────────────────────────────────

def parse_line(line: str) -> Command:
    parts = line.strip().split()
    if not parts:
        raise ProtocolError("linha vazia")
    verb = parts[0].upper()
    try:
        if verb == "POS" and len(parts) == 4:
            return Command("POS", int(parts[1]), float(parts[2]), float(parts[3]))
        if verb in ("PLAN", "BYE") and len(parts) == 2:
            return Command(verb, int(parts[1]))
        if verb == "SUB" and len(parts) == 2 and parts[1].upper() == "DMAP":
            return Command("SUB")
    except ValueError as e:
        raise ProtocolError(f"campo inválido em '{line.strip()}'") from e
    raise ProtocolError(f"comando desconhecido '{line.strip()}'")


def format_response(resp: RouteResponse) -> str:
    if resp.ok:
        coords = " ".join(f"{c[0]} {c[1]}" for c in resp.route.cells)
        return f"ROUTE {resp.user_id} {resp.version} {len(resp.route.cells)} {coords}"
    return format_error(resp.user_id, resp.code, resp.message)


def format_error(user_id: int, code: int, message: str) -> str:
    return f"ERR {user_id} {code} {message}"


def parse_route_line(line: str) -> Tuple[int, int, List[Tuple[int, int]]]:
    """Inverso de format_response para linhas ROUTE (usado por clientes e testes)."""
    parts = line.split()
    if len(parts) < 4 or parts[0] != "ROUTE":
        raise ProtocolError(f"não é uma linha ROUTE: '{line}'")
    uid, version, n = int(parts[1]), int(parts[2]), int(parts[3])
    nums = [int(v) for v in parts[4:]]
    if len(nums) != 2 * n:
        raise ProtocolError(f"ROUTE com {len(nums)} números para {n} células")
    return uid, version, [(nums[2 * i], nums[2 * i + 1]) for i in range(n)]


# ── Servidor ─────────────────────────────────────────────────────────────────

class _Conn:
    def __init__(self, writer: asyncio.StreamWriter):
        self.writer = writer
        self.users: Set[int] = set()
        self.subscribed = False
        self.closed = False

    def send(self, line: str) -> None:
        if not self.closed:
            self.writer.write((line + "\n").encode("utf-8"))


class LineServer:
    def __init__(
        self,
        state: MasterState,
        pool: Optional[PlannerPool] = None,
        workers: int = 1,
        batch_window_ms: float = settings.BATCH_WINDOW_MS,
        republish_ms: float = settings.REPUBLISH_MS,
    ):
        self.state = state
        self.pool = pool
        self.workers = pool.workers if pool is not None else workers
        self.batch_window_ms = batch_window_ms
        self.republish_ms = republish_ms
        self._pending: List[Tuple[int, _Conn]] = []
        self._wake: Optional[asyncio.Event] = None
        self._conns: Set[_Conn] = set()
        self._server: Optional[asyncio.AbstractServer] = None
        self._batcher: Optional[asyncio.Task] = None
        self.served = 0

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1] if self._server else 0

    async def start(self, host: str = settings.TCP_HOST, port: int = settings.TCP_PORT) -> "LineServer":
        self._wake = asyncio.Event()
        self.state.listeners.append(self._notify_subscribers)
        self._server = await asyncio.start_server(self._handle, host, port)
        self._batcher = asyncio.create_task(self._batch_loop())
        log.info(f"servidor de linhas em {host}:{self.port} (W={self.workers})")
        return self

    async def stop(self) -> None:
        if self._notify_subscribers in self.state.listeners:
            self.state.listeners.remove(self._notify_subscribers)
        if self._batcher:
            self._batcher.cancel()
            try:
                await self._batcher
            except asyncio.CancelledError:
                pass
        if self._server:
            self._server.close()
        # wait_closed espera as conexões abertas terminarem
        for conn in list(self._conns):
            conn.closed = True
            conn.writer.close()
        if self._server:
            await self._server.wait_closed()
        log.info("servidor de linhas parado")

    async def serve_forever(self) -> None:
        await self._server.serve_forever()

    # ── conexão ──────────────────────────────────────────────────────────────

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        conn = _Conn(writer)
        self._conns.add(conn)
        try:
            while True:
                try:
                    raw = await reader.readline()
                except ValueError:
                    # linha acima do limite do StreamReader
                    conn.send(format_error(0, ERR_PARSE, "parse"))
                    await writer.drain()
                    continue
                if not raw:
                    break
                self._dispatch(conn, raw.decode("utf-8", errors="replace"))
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            conn.closed = True
            self._conns.discard(conn)
            for uid in conn.users:
                remove_user(self.state, uid)
            writer.close()

    def _dispatch(self, conn: _Conn, line: str) -> None:
        if not line.strip():
            return
        try:
            cmd = parse_line(line)
        except ProtocolError:
            conn.send(format_error(0, ERR_PARSE, "parse"))
            return

        if cmd.verb == "POS":
            try:
                ingest_position(self.state, cmd.user_id, (cmd.x, cmd.y))
                conn.users.add(cmd.user_id)
            except PositionRejected:
                conn.send(format_error(cmd.user_id, ERR_OUT_OF_BOUNDS, "out of bounds"))
        elif cmd.verb == "PLAN":
            self._pending.append((cmd.user_id, conn))
            self._wake.set()
        elif cmd.verb == "BYE":
            remove_user(self.state, cmd.user_id)
            conn.users.discard(cmd.user_id)
        elif cmd.verb == "SUB":
            conn.subscribed = True

    # ── lote ─────────────────────────────────────────────────────────────────

    def _notify_subscribers(self, snap) -> None:
        for conn in self._conns:
            if conn.subscribed:
                conn.send(f"DMAP {snap.version}")

    def _publish_if_due(self) -> None:
        if publish_due(self.state, self.republish_ms):
            publish_snapshot(self.state)

    async def _batch_loop(self) -> None:
        loop = asyncio.get_running_loop()
        while True:
            await self._wake.wait()
            await asyncio.sleep(self.batch_window_ms / 1000.0)
            self._wake.clear()
            batch, self._pending = self._pending, []
            if not batch:
                continue
            self._publish_if_due()

            requests, targets = [], []
            for uid, conn in batch:
                try:
                    requests.append(make_request(self.state, uid))
                    targets.append(conn)
                except DispatchError:
                    conn.send(format_error(uid, ERR_NO_POSITION, "no position"))
                    self.served += 1

            if requests:
                try:
                    ctx = planning_context(self.state)
                    outcome = await loop.run_in_executor(None, plan_queries, ctx, requests, self.workers, self.pool)
                    responses = record_results(self.state, outcome)
                except Exception as e:
                    log.error(f"lote falhou: {e}")
                    responses = [
                        RouteResponse.error(r.user_id, self.state.version, 500, "internal") for r in requests
                    ]
                for conn, resp in zip(targets, responses):
                    conn.send(format_response(resp))
                self.served += len(responses)

            for conn in {c for _, c in batch}:
                if not conn.closed:
                    try:
                        await conn.writer.drain()
                    except ConnectionError:
                        conn.closed = True


async def run_line_server(state: MasterState, pool: Optional[PlannerPool], host: str, port: int) -> None:
    server = await LineServer(state, pool).start(host, port)
    try:
        await server.serve_forever()
    finally:
        await server.stop()

"""
Grid World - planta discretizada (livre, parede, saída)

Formato do arquivo de mapa (ASCII, uma linha por linha do grid):
  '.'  célula livre
  '#'  parede
  'E'  saída
Linhas de cabeçalho opcionais começando com '@' no formato key=value
(ex: "@cell_size=1.0") vêm antes do grid.

Convenções:
  - GridCoord(x, y): x = coluna, y = linha (y=0 é a primeira linha do texto)
  - Vizinhança 8-conectada com passo diagonal √2, sem cortar quina:
    a diagonal é descartada se as duas células cardinais que a ladeiam
    forem paredes.
  - Saídas são atravessáveis; um agente em célula de saída já evacuou.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from app.core.config import settings

log = logging.getLogger("grid")

SQRT2 = math.sqrt(2.0)


class CellKind(Enum):
    FREE = "."
    WALL = "#"
    EXIT = "E"


_GLYPHS: Dict[str, int] = {".": 0, "#": 1, "E": 2}
_KIND_CODE = {CellKind.FREE: 0, CellKind.WALL: 1, CellKind.EXIT: 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}
_CODE_GLYPH = {v: k for k, v in _GLYPHS.items()}

_CARDINAL = ((1, 0), (-1, 0), (0, 1), (0, -1))
_DIAGONAL = ((1, 1), (1, -1), (-1, 1), (-1, -1))

_KNOWN_HEADERS = ("cell_size", "name")


class GridCoord(NamedTuple):
    x: int
    y: int


class MapError(ValueError):
    """Erro de construção/consulta do mapa."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class MapParseError(MapError):
    """Erro de parsing, com linha/coluna (1-based) do documento."""

    def __init__(self, code: str, message: str, line: int, column: int):
        super().__init__(code, f"{message} (linha {line}, coluna {column})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class MapDiagnostics:
    free_cells: int
    exit_cells: int
    unreachable: int
    unreachable_cells: Tuple[GridCoord, ...] = ()

    @property
    def valid(self) -> bool:
        return self.unreachable == 0


@dataclass(frozen=True, eq=False)
class GridMap:
    """
    Planta imutável. `kinds` é um array (height, width) com códigos
    0=livre 1=parede 2=saída; a tabela de adjacência é montada uma vez na
    construção e compartilhada por todas as buscas.
    """

    width: int
    height: int
    cell_size: float
    kinds: np.ndarray
    exits: Tuple[GridCoord, ...]
    connectivity: int = 8
    name: str = ""
    _adjacency: Dict[GridCoord, Tuple[Tuple[GridCoord, float], ...]] = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise MapError("bad_size", f"dimensões inválidas {self.width}x{self.height}")
        if not math.isfinite(self.cell_size) or self.cell_size <= 0:
            raise MapError("bad_cell_size", f"cell_size deve ser > 0 (recebido {self.cell_size})")
        if self.connectivity not in (4, 8):
            raise MapError("bad_connectivity", f"conectividade {self.connectivity} não suportada")
        if self.kinds.shape != (self.height, self.width):
            raise MapError("bad_shape", f"kinds {self.kinds.shape} != ({self.height}, {self.width})")
        object.__setattr__(self, "exits", tuple(GridCoord(*e) for e in self.exits))
        if not self.exits:
            raise MapError("no_exits", "no exits: o mapa precisa de ao menos uma saída")
        if len(set(self.exits)) != len(self.exits):
            raise MapError("duplicate_exit", "lista de saídas com duplicatas")
        for e in self.exits:
            if not self.in_bounds(e) or self.kinds[e.y, e.x] != 2:
                raise MapError("bad_exit", f"saída {tuple(e)} não é uma célula de saída")
        kinds = self.kinds.copy()
        kinds.setflags(write=False)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "_adjacency", self._build_adjacency())

    # ── consultas básicas ────────────────────────────────────────────

    def in_bounds(self, c) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def kind(self, c: GridCoord) -> CellKind:
        return _CODE_KIND[int(self.kinds[c[1], c[0]])]

    def is_wall(self, c) -> bool:
        return self.kinds[c[1], c[0]] == 1

    def is_exit(self, c) -> bool:
        return self.kinds[c[1], c[0]] == 2

    @property
    def world_size(self) -> Tuple[float, float]:
        return self.width * self.cell_size, self.height * self.cell_size

    def free_cells(self) -> List[GridCoord]:
        """Células livres (sem saídas), em ordem de leitura."""
        ys, xs = np.nonzero(self.kinds == 0)
        return [GridCoord(int(x), int(y)) for y, x in zip(ys, xs)]

    def adjacency(self, c: GridCoord) -> Tuple[Tuple[GridCoord, float], ...]:
        """Vizinhos pré-computados, sem validação (uso interno das buscas); parede → ()."""
        return self._adjacency.get(c, ())

    def _build_adjacency(self) -> Dict[GridCoord, Tuple[Tuple[GridCoord, float], ...]]:
        w, h = self.width, self.height
        walls = self.kinds == 1
        table: Dict[GridCoord, Tuple[Tuple[GridCoord, float], ...]] = {}
        for y in range(h):
            for x in range(w):
                if walls[y, x]:
                    continue
                out = []
                for dx, dy in _CARDINAL:
                    nx, ny = x + dx, y + dy
                    if 0 <= nx < w and 0 <= ny < h and not walls[ny, nx]:
                        out.append((GridCoord(nx, ny), 1.0))
                if self.connectivity == 8:
                    for dx, dy in _DIAGONAL:
                        nx, ny = x + dx, y + dy
                        if not (0 <= nx < w and 0 <= ny < h) or walls[ny, nx]:
                            continue
                        # sem cortar quina: basta um dos flancos cardinais livre
                        if walls[y, nx] and walls[ny, x]:
                            continue
                        out.append((GridCoord(nx, ny), SQRT2))
                table[GridCoord(x, y)] = tuple(out)
        return table

    # ── conversão metros ↔ células ───────────────────────────────────

    def world_to_cell(self, x: float, y: float) -> GridCoord:
        return GridCoord(int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size)))

    def cell_center(self, c: GridCoord) -> Tuple[float, float]:
        return (c[0] + 0.5) * self.cell_size, (c[1] + 0.5) * self.cell_size

    def contains_world(self, x: float, y: float) -> bool:
        ww, wh = self.world_size
        return 0.0 <= x < ww and 0.0 <= y < wh


# ═══════════════════════════════════════════
# PARSING / SERIALIZAÇÃO
# ═══════════════════════════════════════════

def parse_grid(text: str, connectivity: Optional[int] = None) -> GridMap:
    """
    Converte um documento ASCII em GridMap.
    Saídas são coletadas em ordem de leitura (cima→baixo, esquerda→direita).
    """
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MapParseError("empty", "documento vazio", 1, 1)

    headers: Dict[str, str] = {}
    idx = 0
    while idx < len(lines) and lines[idx].startswith("@"):
        body = lines[idx][1:]
        if "=" not in body:
            raise MapParseError("bad_header", f"cabeçalho sem '=': {lines[idx]!r}", idx + 1, 1)
        key, value = (p.strip() for p in body.split("=", 1))
        if key not in _KNOWN_HEADERS:
            raise MapParseError("bad_header", f"cabeçalho desconhecido '{key}'", idx + 1, 2)
        headers[key] = value
        idx += 1

    rows = lines[idx:]
    if not rows:
        raise MapParseError("empty", "documento sem linhas de grid", idx + 1, 1)

    width = len(rows[0])
    if width == 0:
        raise MapParseError("empty", "linha de grid vazia", idx + 1, 1)
    kinds = np.zeros((len(rows), width), dtype=np.int8)
    exits: List[GridCoord] = []
    for y, row in enumerate(rows):
        line_no = idx + y + 1
        if len(row) != width:
            raise MapParseError(
                "ragged", f"linha com {len(row)} colunas, esperado {width}",
                line_no, min(len(row), width) + 1,
            )
        for x, ch in enumerate(row):
            code = _GLYPHS.get(ch)
            if code is None:
                raise MapParseError("bad_glyph", f"glifo desconhecido {ch!r}", line_no, x + 1)
            kinds[y, x] = code
            if code == 2:
                exits.append(GridCoord(x, y))

    if not exits:
        raise MapParseError("no_exits", "no exits: nenhuma célula 'E' no mapa", idx + 1, 1)

    try:
        cell_size = float(headers.get("cell_size", settings.CELL_SIZE))
    except ValueError:
        raise MapParseError("bad_header", f"cell_size inválido {headers['cell_size']!r}", 1, 2)
    if "cell_size" in headers and not (math.isfinite(cell_size) and cell_size > 0):
        raise MapParseError("bad_header", f"cell_size deve ser finito e > 0 (recebido {headers['cell_size']!r})", 1, 2)

    return GridMap(
        width=width,
        height=len(rows),
        cell_size=cell_size,
        kinds=kinds,
        exits=tuple(exits),
        connectivity=connectivity or settings.GRID_CONNECTIVITY,
        name=headers.get("name", ""),
    )


def serialize_grid(grid: GridMap) -> str:
    """Documento canônico: cabeçalhos só quando fora do padrão, newline final."""
    out = []
    if grid.name:
        out.append(f"@name={grid.name}")
    if grid.cell_size != 1.0:
        out.append(f"@cell_size={grid.cell_size!r}")
    for y in range(grid.height):
        out.append("".join(_CODE_GLYPH[int(v)] for v in grid.kinds[y]))
    return "\n".join(out) + "\n"


def load_grid(path, connectivity: Optional[int] = None) -> GridMap:
    text = Path(path).read_text(encoding="utf-8")
    grid = parse_grid(text, connectivity)
    if not grid.name:
        object.__setattr__(grid, "name", Path(path).stem)
    log.info(f"mapa {Path(path).name}: {grid.width}x{grid.height}, {len(grid.exits)} células de saída")
    return grid


# ═══════════════════════════════════════════
# CONSULTAS
# ═══════════════════════════════════════════

def neighbors(grid: GridMap, c: GridCoord) -> List[Tuple[GridCoord, float]]:
    """Vizinhos não-parede de c com a distância do passo (1 ou √2)."""
    if not grid.in_bounds(c):
        raise MapError("out_of_bounds", f"célula {tuple(c)} fora do mapa")
    if grid.is_wall(c):
        raise MapError("wall", f"célula {tuple(c)} é parede")
    return list(grid.adjacency(GridCoord(*c)))


def validate_map(grid: GridMap) -> MapDiagnostics:
    """
    Flood-fill a partir de todas as saídas. Como a vizinhança é simétrica,
    alcançável a partir de uma saída ⇔ consegue chegar a uma saída.
    """
    seen = set(grid.exits)
    queue = deque(grid.exits)
    while queue:
        c = queue.popleft()
        for n, _ in grid.adjacency(c):
            if n not in seen:
                seen.add(n)
                queue.append(n)
    free = grid.free_cells()
    unreachable = tuple(c for c in free if c not in seen)
    diag = MapDiagnostics(
        free_cells=len(free),
        exit_cells=len(grid.exits),
        unreachable=len(unreachable),
        unreachable_cells=unreachable,
    )
    if unreachable:
        log.warning(f"{len(unreachable)} células livres sem saída alcançável")
    return diag


def exit_groups(grid: GridMap) -> Dict[str, List[GridCoord]]:
    """
    Agrupa células de saída adjacentes (4-conectadas) numa saída lógica,
    rotuladas A, B, C... em ordem de leitura da primeira célula.
    """
    exit_set = set(grid.exits)
    groups: Dict[str, List[GridCoord]] = {}
    seen = set()
    for e in grid.exits:
        if e in seen:
            continue
        members = []
        queue = deque([e])
        seen.add(e)
        while queue:
            c = queue.popleft()
            members.append(c)
            for dx, dy in _CARDINAL:
                n = GridCoord(c.x + dx, c.y + dy)
                if n in exit_set and n not in seen:
                    seen.add(n)
                    queue.append(n)
        groups[_label(len(groups))] = sorted(members, key=lambda p: (p.y, p.x))
    return groups


def exit_label_index(grid: GridMap) -> Dict[GridCoord, str]:
    return {c: label for label, cells in exit_groups(grid).items() for c in cells}


def _label(i: int) -> str:
    letters = ""
    i += 1
    while i:
        i, r = divmod(i - 1, 26)
        letters = chr(ord("A") + r) + letters
    return letters

"""
Mapa de Densidade - campo de congestionamento ρ por célula

  ρ(x,y) = Σ_{(xi,yi) ∈ C(x,y)}  γ·N(xi,yi)/√(2π) · exp(-((xi-x)² + (yi-y)²)/2)

  C(x,y): patch de células a distância Chebyshev ≤ patch_radius de (x,y)
  N     : número de agentes na célula
  γ     : coeficiente de congestionamento (γ=5 nos experimentos)

Detalhes:
  - Largura da gaussiana fixa em 1 célula, como na fórmula (sem σ).
  - Constante 1/√(2π) mantida como está, sem "corrigir" para 1/(2π).
  - Só células ocupadas entram na soma (as vazias contribuem 0 de qualquer forma).
  - Reconstrução completa a cada snapshot; snapshots são imutáveis e versionados.
  - Arrays indexados [y, x] (linha, coluna), igual ao texto do mapa.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.engines.grid_world import GridCoord, GridMap

log = logging.getLogger("density")

SQRT_2PI = math.sqrt(2.0 * math.pi)

# versão global para quem não mantém contador próprio
_VERSION_SEQ = itertools.count(1)


class DensityError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class PositionOutOfBounds(DensityError):
    def __init__(self, index: int, position):
        super().__init__("out_of_bounds", f"posição #{index} {tuple(position)} fora do mapa")
        self.index = index


@dataclass(frozen=True)
class PopulationCounts:
    """Contagem esparsa de agentes por célula (só entradas com N ≥ 1)."""

    counts: Dict[GridCoord, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True, eq=False)
class DensityMap:
    width: int
    height: int
    rho: np.ndarray
    gamma: float
    patch_radius: int
    version: int

    @property
    def peak(self) -> float:
        return float(self.rho.max()) if self.rho.size else 0.0

    def as_rows(self) -> List[List[float]]:
        """Cópia em listas Python (leitura rápida nos laços de busca)."""
        return self.rho.tolist()


def _next_version() -> int:
    return next(_VERSION_SEQ)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def kernel_weights(patch_radius: int) -> np.ndarray:
    """exp(-(dx²+dy²)/2) para dx,dy ∈ [-r, r]; sem γ nem a constante."""
    r = np.arange(-patch_radius, patch_radius + 1, dtype=np.float64)
    dx, dy = np.meshgrid(r, r)
    return np.exp(-(dx * dx + dy * dy) / 2.0)


# ═══════════════════════════════════════════
# OPERAÇÕES
# ═══════════════════════════════════════════

def bin_positions(positions: Iterable[Sequence[float]], grid: GridMap) -> PopulationCounts:
    """Agrega posições em metros nas células que as contêm (floor(coord / cell_size))."""
    counts: Dict[GridCoord, int] = {}
    for i, pos in enumerate(positions):
        x, y = float(pos[0]), float(pos[1])
        if not grid.contains_world(x, y):
            raise PositionOutOfBounds(i, (x, y))
        c = grid.world_to_cell(x, y)
        counts[c] = counts.get(c, 0) + 1
    return PopulationCounts(counts)


def build_density(
    counts: PopulationCounts,
    grid: GridMap,
    gamma: float,
    patch_radius: int,
    version: Optional[int] = None,
) -> DensityMap:
    """
    Constrói o snapshot somando, para cada célula ocupada, N·γ/√(2π)·kernel
    na janela (2r+1)² recortada nas bordas. Células ocupadas são visitadas
    em ordem (y, x) para que o resultado seja reprodutível bit a bit.
    """
    if gamma <= 0:
        raise DensityError("bad_gamma", f"gamma deve ser > 0 (recebido {gamma})")
    if patch_radius < 0:
        raise DensityError("bad_patch", f"patch_radius deve ser ≥ 0 (recebido {patch_radius})")

    w, h, r = grid.width, grid.height, int(patch_radius)
    rho = np.zeros((h, w), dtype=np.float64)
    kernel = kernel_weights(r)
    coef = gamma / SQRT_2PI

    for c in sorted(counts.counts, key=lambda p: (p[1], p[0])):
        n = counts.counts[c]
        x, y = c
        if not (0 <= x < w and 0 <= y < h):
            raise DensityError("dimension_mismatch", f"célula {tuple(c)} fora do grid {w}x{h}")
        if n < 1:
            continue
        x0, x1 = max(0, x - r), min(w, x + r + 1)
        y0, y1 = max(0, y - r), min(h, y + r + 1)
        rho[y0:y1, x0:x1] += (coef * n) * kernel[y0 - y + r:y1 - y + r, x0 - x + r:x1 - x + r]

    return DensityMap(
        width=w,
        height=h,
        rho=_freeze(rho),
        gamma=float(gamma),
        patch_radius=r,
        version=version if version is not None else _next_version(),
    )


def empty_density(grid: GridMap, gamma: float, patch_radius: int, version: Optional[int] = None) -> DensityMap:
    return build_density(PopulationCounts({}), grid, gamma, patch_radius, version)


def query_density(dmap: DensityMap, c: GridCoord) -> float:
    if not (0 <= c[0] < dmap.width and 0 <= c[1] < dmap.height):
        raise DensityError("out_of_bounds", f"célula {tuple(c)} fora do mapa de densidade")
    return float(dmap.rho[c[1], c[0]])


def check_dimensions(dmap: DensityMap, grid: GridMap) -> None:
    if (dmap.width, dmap.height) != (grid.width, grid.height):
        raise DensityError(
            "dimension_mismatch",
            f"densidade {dmap.width}x{dmap.height} != mapa {grid.width}x{grid.height}",
        )


def heatmap_rows(dmap: DensityMap) -> List[Tuple[int, int, float]]:
    """Linhas (x, y, rho) em ordem estável: y crescente, depois x."""
    return [
        (x, y, float(dmap.rho[y, x]))
        for y in range(dmap.height)
        for x in range(dmap.width)
    ]


# ═══════════════════════════════════════════
# FACHADA
# ═══════════════════════════════════════════

class DensityField:
    """Snapshots a partir do que cada chamador tem: posições em metros ou células ocupadas."""

    @staticmethod
    def from_positions(
        positions: Iterable[Sequence[float]],
        grid: GridMap,
        gamma: float,
        patch_radius: int,
        version: Optional[int] = None,
    ) -> DensityMap:
        positions = list(positions)
        counts = bin_positions(positions, grid) if positions else PopulationCounts({})
        return build_density(counts, grid, gamma, patch_radius, version)

    @staticmethod
    def from_cells(
        cells: Iterable[GridCoord],
        grid: GridMap,
        gamma: float,
        patch_radius: int,
        version: Optional[int] = None,
    ) -> DensityMap:
        counts: Dict[GridCoord, int] = {}
        for c in cells:
            c = GridCoord(*c)
            counts[c] = counts.get(c, 0) + 1
        return build_density(PopulationCounts(counts), grid, gamma, patch_radius, version)

    @staticmethod
    def flat(grid: GridMap, version: Optional[int] = 0) -> DensityMap:
        """Campo zerado (só distância importa)."""
        return build_density(PopulationCounts({}), grid, 1.0, 0, version)

"""
Schemas Pydantic da API HTTP do serviço de rotas
"""

from typing import List, Optional

from pydantic import BaseModel, Field


# Posições
class PositionIn(BaseModel):
    user_id: int
    x: float
    y: float


class PositionBatch(BaseModel):
    positions: List[PositionIn] = Field(default_factory=list)


class PositionResult(BaseModel):
    user_id: int
    accepted: bool
    code: int = 0
    message: str = ""


class PositionBatchResult(BaseModel):
    accepted: int
    rejected: int
    results: List[PositionResult]


# Planejamento
class PlanRequest(BaseModel):
    user_ids: List[int] = Field(default_factory=list)


class RouteOut(BaseModel):
    user_id: int
    version: int
    cells: Optional[List[List[int]]] = None
    exit: Optional[List[int]] = None
    cost: Optional[float] = None
    code: int = 0
    message: str = ""


class PlanResponse(BaseModel):
    version: int
    routes: List[RouteOut]


# Estado
class ServiceStatus(BaseModel):
    users: int
    version: int
    dirty: bool
    results: int
    map: str
    width: int
    height: int
    exits: int
    workers: int
    backend: str

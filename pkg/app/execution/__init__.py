from .dispatch import MasterState, PlannerPool, RouteRequest, RouteResponse, serve_queries

__all__ = ["MasterState", "PlannerPool", "RouteRequest", "RouteResponse", "serve_queries"]

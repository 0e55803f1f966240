"""
Engines do Evac Router
"""

from .grid_world import CellKind, GridCoord, GridMap, MapError, load_grid, parse_grid, validate_map
from .density_map import DensityField, DensityMap, PopulationCounts, bin_positions, build_density, query_density
from .router import PlanNode, Route, RoutePlanner, plan_route
from .crowd_sim import EgressStats, Scenario, run_evacuation

__all__ = [
    "CellKind", "GridCoord", "GridMap", "MapError", "load_grid", "parse_grid", "validate_map",
    "DensityField", "DensityMap", "PopulationCounts", "bin_positions", "build_density", "query_density",
    "PlanNode", "Route", "RoutePlanner", "plan_route",
    "EgressStats", "Scenario", "run_evacuation",
]

"""Stream-function air corridors with MDP-based, first-come-first-serve UAS allocation."""

from __future__ import annotations

from .airspace import ObstacleKind, ObstaclePolygon, Region, build_grid, merge_proximal_obstacles, section_layer
from .corridors import CorridorConfig, build_corridor_sets, extract_streamlines
from .engine import EngineConfig, UtmEngine
from .flow import BoundaryConditionSpec, solve_stream_function
from .mdp import CorridorPlanner, StateSpace
from .pipeline import run_pipeline
from .scenario import load_scenario

__version__ = "0.1.0"

__all__ = [
    "BoundaryConditionSpec",
    "CorridorConfig",
    "CorridorPlanner",
    "EngineConfig",
    "ObstacleKind",
    "ObstaclePolygon",
    "Region",
    "StateSpace",
    "UtmEngine",
    "build_corridor_sets",
    "build_grid",
    "extract_streamlines",
    "load_scenario",
    "merge_proximal_obstacles",
    "run_pipeline",
    "section_layer",
    "solve_stream_function",
]

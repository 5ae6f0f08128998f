"""Multi-lane traffic simulator: networks, scenarios and the episode runner."""
from .config import BrakingZone, ConfigError, Inflow, ScenarioConfig, VehicleSpec, load, loads, save, dumps
from .network import RoadNetwork, SectionSpec, freeway, ring_road, straight_road
from .runner import EpisodeMetrics, Trace, run_episode, write_metrics_json
from .scenarios import KINDS, default_params, make_scenario
from .world import (CrashedError, ObservationConfig, VehicleState, World, build_context, build_observation,
                    observation_size, step_world, uncontrolled_driver)

__all__ = [
    "BrakingZone", "ConfigError", "Inflow", "ScenarioConfig", "VehicleSpec", "load", "loads", "save", "dumps",
    "RoadNetwork", "SectionSpec", "freeway", "ring_road", "straight_road",
    "EpisodeMetrics", "Trace", "run_episode", "write_metrics_json",
    "KINDS", "default_params", "make_scenario",
    "CrashedError", "ObservationConfig", "VehicleState", "World", "build_context", "build_observation",
    "observation_size", "step_world", "uncontrolled_driver",
]

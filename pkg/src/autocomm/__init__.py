"""Language-model-in-the-loop autonomy toolkit: resource-block scheduling,
geometric channel estimation, and intersection signal control, with
deterministic seeding and offline-replayable engines."""

__version__ = "0.1.0"

from .configs import (
    Box,
    ChannelSceneConfig,
    ConfigError,
    ObjectiveKind,
    ObjectiveSpec,
    ScenarioConfig,
    SchedulingConfig,
    Track,
    TrafficConfig,
    build_scenario,
    scenario_from_dict,
    scenario_to_json,
)
from .rng import RngStream, stream

__all__ = [
    "__version__",
    "Box",
    "ChannelSceneConfig",
    "ConfigError",
    "ObjectiveKind",
    "ObjectiveSpec",
    "ScenarioConfig",
    "SchedulingConfig",
    "Track",
    "TrafficConfig",
    "build_scenario",
    "scenario_from_dict",
    "scenario_to_json",
    "RngStream",
    "stream",
]

"""Bridges of the simple exclusion process started from the step configuration."""

__version__ = "0.1.0"

from .core import (
    ORIGIN,
    Configuration,
    ConfigurationError,
    Direction,
    Move,
    apply_move,
    config_stats,
    dominates,
    enumerate_moves,
    from_occupancy,
    make_config,
    partition_count,
    to_occupancy,
)
from .simulate import RngStream, Trajectory, gillespie, trajectory_stats

__all__ = [
    "ORIGIN",
    "Configuration",
    "ConfigurationError",
    "Direction",
    "Move",
    "RngStream",
    "Trajectory",
    "apply_move",
    "config_stats",
    "dominates",
    "enumerate_moves",
    "from_occupancy",
    "gillespie",
    "make_config",
    "partition_count",
    "to_occupancy",
    "trajectory_stats",
]

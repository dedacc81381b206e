"""Mark-0 agent-based macroeconomy with a Taylor-rule central bank."""

from mark0.core import EconomyState, Halt, TimeSeries, init_economy, run, step
from mark0.params import ConfigError, ModelParams

__all__ = [
    "ConfigError",
    "EconomyState",
    "Halt",
    "ModelParams",
    "TimeSeries",
    "init_economy",
    "run",
    "step",
]

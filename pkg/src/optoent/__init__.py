"""Measurement-induced entanglement of qubits read out through optomechanical transducers."""

from .errors import ConfigurationError, SolverError, TrajectoryError
from .params import (
    ChannelParams,
    EffectiveRates,
    PhysicalParams,
    derive_rates,
    get_preset,
    load_presets,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelParams",
    "ConfigurationError",
    "EffectiveRates",
    "PhysicalParams",
    "SolverError",
    "TrajectoryError",
    "derive_rates",
    "get_preset",
    "load_presets",
]

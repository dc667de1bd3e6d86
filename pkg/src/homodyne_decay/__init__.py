"""Simulation and analysis of diffusive quantum trajectories of a decaying two-level emitter."""

from .core import (
    EXCITED,
    GROUND,
    BlochState,
    DensityMatrix2,
    HomodyneError,
    HomodyneRecord,
    IntegrationDivergedError,
    InvalidParameterError,
    SimConfig,
    Trajectory,
    UnsupportedStateError,
    substream,
    wiener_increments,
)
from .propagator import (
    Ensemble,
    simulate_ensemble,
    simulate_trajectory,
    step_bloch,
    step_density,
    track_ensemble,
    track_trajectory,
    unconditional_state,
)

__version__ = "0.1.0"

__all__ = [
    "EXCITED",
    "GROUND",
    "BlochState",
    "DensityMatrix2",
    "Ensemble",
    "HomodyneError",
    "HomodyneRecord",
    "IntegrationDivergedError",
    "InvalidParameterError",
    "SimConfig",
    "Trajectory",
    "UnsupportedStateError",
    "simulate_ensemble",
    "simulate_trajectory",
    "step_bloch",
    "step_density",
    "substream",
    "track_ensemble",
    "track_trajectory",
    "unconditional_state",
    "wiener_increments",
]

"""Finite-difference solver for mean field games with interaction through controls."""

from .grid import SpaceTimeGrid
from .numham import HamiltonianParams
from .drift import DriftParams, Kernel
from .problem import Problem
from .outer import (ContinuationSchedule, NewtonConfig, OuterState, continuation, newton_outer,
                    stationary_solve)
from .scenarios import ScenarioConfig, example1, example2, oneshot_oracle, perturbation_family
from .sweep import BACKEND

__all__ = [
    "SpaceTimeGrid", "HamiltonianParams", "DriftParams", "Kernel", "Problem", "ContinuationSchedule",
    "NewtonConfig", "OuterState", "continuation", "newton_outer", "stationary_solve", "ScenarioConfig",
    "example1", "example2", "oneshot_oracle", "perturbation_family", "BACKEND",
]
__version__ = "0.1.0"

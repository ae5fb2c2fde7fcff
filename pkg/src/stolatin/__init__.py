"""Stochastic LATIN solver for elastoplastic structures with random material data."""
from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateTripletError,
    EmptySystemError,
    InfeasibleSpecError,
    IntegrityError,
    InvalidGeometryError,
    LinearlyDependentDirectionError,
)
from .latin import LatinConfig, LatinState, solve
from .mcs import run_mcs
from .problem import Problem, StochasticMaterial, TimeGrid
from .update import update_stage

__version__ = "0.1.0"

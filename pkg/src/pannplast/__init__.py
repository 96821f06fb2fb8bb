"""Finite-strain cyclic plasticity with learnable, thermodynamically consistent potentials."""
from . import tensor3  # noqa: F401  (enables float64 before anything else)
from .constitutive import PlasticState, SolverSettings, return_map, virgin_state
from .driver import LoadingProgram, TimeSeries, build_cycles, run_program, step_uniaxial
from .potentials import (FRAMEWORKS, FrameworkSpec, PhenomenologicalParams, PotentialSet,
                         build, load_default_params)

__version__ = "0.1.0"

__all__ = [
    "FRAMEWORKS", "FrameworkSpec", "LoadingProgram", "PhenomenologicalParams", "PlasticState",
    "PotentialSet", "SolverSettings", "TimeSeries", "build", "build_cycles",
    "load_default_params", "return_map", "run_program", "step_uniaxial", "virgin_state",
]

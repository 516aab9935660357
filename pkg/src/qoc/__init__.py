"""Quantum optimal control toolkit.

Piecewise-constant (GRAPE) and analytic (GOAT, CRAB) pulse optimization,
open-system gate optimization, randomized benchmarking, DRAG pulses and a
classical adjoint-method example.
"""
from .errors import QocError
from .goat import GoatProblem, crab_optimize, goat_optimize
from .grape import grape_optimize
from .objectives import Objective, OptimizationRun
from .open_control import OpenProblem, open_optimize
from .propagation import LindbladModel
from .system import AnalyticPulse, ControlSystem, PiecewisePulse

__version__ = "0.1.0"

__all__ = [
    "AnalyticPulse",
    "ControlSystem",
    "GoatProblem",
    "LindbladModel",
    "Objective",
    "OpenProblem",
    "OptimizationRun",
    "PiecewisePulse",
    "QocError",
    "crab_optimize",
    "goat_optimize",
    "grape_optimize",
    "open_optimize",
]

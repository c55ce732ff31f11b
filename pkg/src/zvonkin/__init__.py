"""Drift removal for SDEs with Hoelder, time-integrable coefficients."""

from .fields import FieldError, Grid, Mollifier, SpaceTimeField, mollify
from .pde_solver import ParabolicProblem, PdeSolution, SolverError, solve_fd, solve_mild

__version__ = "0.1.0"

__all__ = [
    "FieldError",
    "Grid",
    "Mollifier",
    "ParabolicProblem",
    "PdeSolution",
    "SolverError",
    "SpaceTimeField",
    "mollify",
    "solve_fd",
    "solve_mild",
    "__version__",
]

"""Schrödinger-type Dirichlet problems with boundary-singular potentials.

Solves -Δu + V u = f on the unit interval or the unit disk for nonnegative
V that may blow up at the boundary, and studies when the Hopf boundary
lemma survives: normal derivatives, duality solutions with Dirac boundary
data and the exceptional boundary set where they vanish.
"""

__version__ = "0.1.0"

from .geometry import DISK, INTERVAL, BoundaryPoint, ConfigurationError, DomainError, DomainGeometry, Grid, build_grid
from .potential import Constant, PowerLaw, Tabulated, TruncationLadder, Zero, default_ladder, ladder_to
from .solver import LimitSolution, SolveResult, SourceField, SolverError, named_source, solve_limit, solve_truncated

__all__ = [
    "DISK", "INTERVAL", "BoundaryPoint", "ConfigurationError", "DomainError", "DomainGeometry", "Grid",
    "build_grid", "Constant", "PowerLaw", "Tabulated", "TruncationLadder", "Zero", "default_ladder",
    "ladder_to", "LimitSolution", "SolveResult", "SourceField", "SolverError", "named_source",
    "solve_limit", "solve_truncated",
]

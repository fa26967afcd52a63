"""Numerical null control of super-strongly degenerate parabolic equations."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    InvariantViolation, LocalRadiusExceeded, NumericalDomainError, QuadratureFailure, SolverError,
)
from .evolution import ProblemSpec, solve_adjoint, solve_forward  # noqa: F401
from .grid import Field, SpaceMesh, TimeGrid, make_graded_mesh, make_time_grid  # noqa: F401
from .hum import HumConfig, solve_hum  # noqa: F401
from .weighted import WeightedConfig, solve_weighted_control  # noqa: F401
from .weights import CarlemanParams  # noqa: F401

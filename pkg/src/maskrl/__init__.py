"""Continuous action masking for policy-gradient RL on zonotopic action sets."""

from .geometry import (
    GeometryError,
    Halfspace,
    IntervalBox,
    Zonotope,
    ball_underapprox,
    boundary_point,
    contains_point,
    linear_map,
    minkowski_sum,
    support_function,
)
from .lp import LinearProgram, LPResult, LPSolverError, LPStatus, solve_lp

__all__ = [
    "GeometryError",
    "Halfspace",
    "IntervalBox",
    "Zonotope",
    "ball_underapprox",
    "boundary_point",
    "contains_point",
    "linear_map",
    "minkowski_sum",
    "support_function",
    "LinearProgram",
    "LPResult",
    "LPSolverError",
    "LPStatus",
    "solve_lp",
]

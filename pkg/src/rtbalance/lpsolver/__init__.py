"""Bounded-variable linear programming: interior point solver and simplex oracle."""
from .interior import IPParams, solve_interior_point, to_standard_form
from .problem import (INFEASIBLE, ITERATION_LIMIT, OPTIMAL, UNBOUNDED, LinearProgram,
                      LPError, LPSolution, dual_objective, kkt_residuals)
from .simplex import solve_simplex
from .textio import dump_lp, parse_lp

__all__ = [
    "INFEASIBLE", "ITERATION_LIMIT", "OPTIMAL", "UNBOUNDED", "IPParams", "LPError",
    "LPSolution", "LinearProgram", "dual_objective", "dump_lp", "kkt_residuals",
    "parse_lp", "solve_interior_point", "solve_simplex", "to_standard_form",
]

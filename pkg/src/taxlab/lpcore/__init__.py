"""Linear-programming core: program container, solvers, rolling horizon."""

from .program import (EQ, GE, LE, IterationLimitError, LinearProgram, LpSolution, LpStatus,
                      SolverError, ToleranceSet, constraint_violation, to_lp_text)
from .rolling import BlockInfeasible, StitchedSolution, block_plan, solve_rolling
from .solve import BACKENDS, solve

__all__ = [
    "EQ", "GE", "LE", "BACKENDS", "BlockInfeasible", "IterationLimitError", "LinearProgram",
    "LpSolution", "LpStatus", "SolverError", "StitchedSolution", "ToleranceSet", "block_plan",
    "constraint_violation", "solve", "solve_rolling", "to_lp_text",
]

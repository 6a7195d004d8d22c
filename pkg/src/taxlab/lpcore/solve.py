"""Solver front end: one ``solve`` call, two interchangeable backends."""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .program import (EQ, GE, LE, IterationLimitError, LinearProgram, LpSolution, LpStatus,
                      SolverError, ToleranceSet, constraint_violation)
from .simplex import solve_simplex

BACKENDS = ("simplex", "highs")


def _solve_highs(lp: LinearProgram, tol: ToleranceSet) -> LpSolution:
    A = lp.A
    le = lp.sense == LE
    ge = lp.sense == GE
    eq = lp.sense == EQ
    ub_rows = np.flatnonzero(le | ge)
    A_ub = b_ub = A_eq = b_eq = None
    if ub_rows.size:
        flip = np.where(ge[ub_rows], -1.0, 1.0)
        A_ub = sp.diags(flip) @ A[ub_rows]
        b_ub = flip * lp.rhs[ub_rows]
    if eq.any():
        A_eq = A[eq]
        b_eq = lp.rhs[eq]
    bounds = np.column_stack([lp.lb, lp.ub])
    res = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs-ds",
                  options={"primal_feasibility_tolerance": tol.feasibility,
                           "dual_feasibility_tolerance": tol.optimality,
                           "presolve": True,
                           "simplex_dual_edge_weight_strategy": "devex",
                           "maxiter": tol.iteration_factor * (lp.num_vars + lp.num_rows) + 10})
    if res.status == 0:
        x = np.clip(np.asarray(res.x, dtype=float), lp.lb, lp.ub)
        return LpSolution(LpStatus.OPTIMAL, float(lp.c @ x), x, constraint_violation(lp, x),
                          iterations=int(getattr(res, "nit", 0)), backend="highs")
    if res.status == 1:
        raise IterationLimitError(res.message)
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, math.inf, np.full(lp.num_vars, np.nan), math.inf,
                          backend="highs")
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, -math.inf, np.full(lp.num_vars, np.nan), math.inf,
                          backend="highs")
    raise SolverError(f"HiGHS failed: {res.message}")


def solve(lp: LinearProgram, tol: ToleranceSet | None = None, backend: str = "simplex") -> LpSolution:
    """Solve ``lp`` to optimality or certify infeasibility/unboundedness.

    ``backend="simplex"`` runs the in-house revised simplex; ``"highs"`` hands
    the same program to HiGHS' dual simplex.  Both results are re-audited by
    :func:`constraint_violation`; an optimal answer that fails the audit is an
    error, never a silent return.
    """
    tol = tol or ToleranceSet()
    if backend == "simplex":
        sol = solve_simplex(lp, tol)
    elif backend == "highs":
        sol = _solve_highs(lp, tol)
    else:
        raise ValueError(f"unknown LP backend {backend!r}; choose from {BACKENDS}")
    if sol.optimal:
        scale = max(1.0, float(np.abs(lp.rhs).max(initial=0.0)))
        if sol.max_constraint_violation > 10 * tol.feasibility * scale:
            raise SolverError(
                f"{backend} returned an optimal point violating constraints by "
                f"{sol.max_constraint_violation:.3e}")
    return sol

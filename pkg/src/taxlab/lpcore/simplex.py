"""Bounded-variable revised primal simplex.

Rows are converted to equalities with bounded slacks, ``A x + s = b``, and a
two-phase method is run over the combined column set ``[A | I | D]`` where
``D`` holds sign-adjusted artificial columns.  The basis inverse is kept as a
sparse LU factor of a reference basis followed by a product-form eta file,
refactorized every ``REFACTOR_EVERY`` pivots.

Pricing is Dantzig's rule with ties broken by lowest index; after a run of
degenerate pivots the solver switches permanently (for that phase) to Bland's
rule, which cannot cycle.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .program import (GE, LE, IterationLimitError, LinearProgram, LpSolution, LpStatus,
                      SolverError, ToleranceSet, constraint_violation)

logger = logging.getLogger(__name__)

REFACTOR_EVERY = 64
DEGENERATE_RUN = 50
AT_LOWER, AT_UPPER, AT_ZERO, BASIC = 0, 1, 2, 3


class _BasisFactor:
    """LU of a reference basis plus eta columns for subsequent pivots."""

    def __init__(self, cols: sp.csc_matrix, pivot_tol: float):
        m = cols.shape[0]
        self.m = m
        if m == 0:
            self.lu = None
        else:
            try:
                self.lu = spla.splu(cols.tocsc(), permc_spec="COLAMD",
                                    diag_pivot_thresh=1.0, options={"SymmetricMode": False})
            except RuntimeError as exc:  # exactly singular
                raise SolverError(f"singular basis at refactorization: {exc}") from exc
        self.etas: list[tuple[int, np.ndarray]] = []
        self.pivot_tol = pivot_tol

    def ftran(self, a: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return a.copy()
        z = self.lu.solve(np.asarray(a, dtype=float))
        for p, w in self.etas:
            zp = z[p] / w[p]
            z -= w * zp
            z[p] = zp
        return z

    def btran(self, c: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return c.copy()
        v = np.array(c, dtype=float)
        for p, w in reversed(self.etas):
            vp = v[p]
            v[p] = (vp - (w @ v - w[p] * vp)) / w[p]
        return self.lu.solve(v, trans="T")

    def push(self, p: int, w: np.ndarray) -> None:
        self.etas.append((p, w.copy()))


class _Simplex:
    def __init__(self, lp: LinearProgram, tol: ToleranceSet):
        self.lp = lp
        self.tol = tol
        n, m = lp.num_vars, lp.num_rows
        self.n, self.m = n, m
        A = lp.A.tocsc()
        b = lp.rhs.astype(float)

        # slacks: A x + s = b, so s = b - A x; L rows need s >= 0, G rows need s <= 0
        s_lb = np.where(lp.sense == GE, -math.inf, 0.0)
        s_ub = np.where(lp.sense == LE, math.inf, 0.0)

        lb = np.concatenate([lp.lb, s_lb, np.zeros(m)])
        ub = np.concatenate([lp.ub, s_ub, np.full(m, math.inf)])

        x = np.zeros(n + 2 * m)
        state = np.full(n + 2 * m, AT_ZERO, dtype=np.int8)
        for j in range(n + m):
            if math.isfinite(lb[j]) and (not math.isfinite(ub[j]) or abs(lb[j]) <= abs(ub[j])):
                x[j], state[j] = lb[j], AT_LOWER
            elif math.isfinite(ub[j]):
                x[j], state[j] = ub[j], AT_UPPER
        resid = b - A @ x[:n] if m else np.zeros(0)

        signs = np.ones(m)
        basis = np.empty(m, dtype=np.int64)
        for i in range(m):
            r = resid[i]
            slack = n + i
            if (lp.sense[i] == LE and r >= 0) or (lp.sense[i] == GE and r <= 0):
                basis[i] = slack
                x[slack] = r
                x[n + m + i] = 0.0
                state[n + m + i] = AT_LOWER
                ub[n + m + i] = 0.0
            else:
                signs[i] = 1.0 if r >= 0 else -1.0
                basis[i] = n + m + i
                x[n + m + i] = abs(r)
                x[slack] = 0.0
        state[basis] = BASIC

        self.cols = sp.hstack([A, sp.identity(m, format="csc"),
                               sp.diags(signs, format="csc")], format="csc")
        self.lb, self.ub = lb, ub
        self.x, self.state, self.basis = x, state, basis
        self.b = b
        self.N = n + 2 * m
        self.iterations = 0
        self.max_iter = tol.iteration_factor * (n + m) + 10
        self.factor: _BasisFactor | None = None
        self.pivots_since_refactor = 0

    def _column(self, j: int) -> np.ndarray:
        col = np.zeros(self.m)
        lo, hi = self.cols.indptr[j], self.cols.indptr[j + 1]
        col[self.cols.indices[lo:hi]] = self.cols.data[lo:hi]
        return col

    def _refactor(self) -> None:
        self.factor = _BasisFactor(self.cols[:, self.basis], self.tol.pivot)
        self.pivots_since_refactor = 0
        nb = self.state != BASIC
        rhs = self.b - self.cols[:, np.flatnonzero(nb)] @ self.x[nb]
        self.x[self.basis] = self.factor.ftran(rhs)

    def _run_phase(self, cost: np.ndarray) -> str:
        tol = self.tol
        bland = False
        degenerate = 0
        self._refactor()
        while True:
            if self.iterations >= self.max_iter:
                raise IterationLimitError(
                    f"simplex exceeded {self.max_iter} iterations (n={self.n}, m={self.m})")
            if self.pivots_since_refactor >= REFACTOR_EVERY:
                self._refactor()

            y = self.factor.btran(cost[self.basis])
            d = cost - self.cols.T @ y
            st = self.state
            movable = self.lb < self.ub
            inc = movable & ((st == AT_LOWER) | (st == AT_ZERO)) & (d < -tol.optimality)
            dec = movable & ((st == AT_UPPER) | (st == AT_ZERO)) & (d > tol.optimality)
            cand = np.flatnonzero(inc | dec)
            if cand.size == 0:
                return "optimal"
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            delta = 1.0 if inc[j] else -1.0

            w = self.factor.ftran(self._column(j))
            # basic values move by -delta * theta * w
            move = -delta * w
            theta = self.ub[j] - self.lb[j]
            leave = -1
            leave_to_upper = False
            xB = self.x[self.basis]
            lbB = self.lb[self.basis]
            ubB = self.ub[self.basis]
            for i in np.flatnonzero(np.abs(w) > tol.pivot):
                if move[i] < 0:
                    if not math.isfinite(lbB[i]):
                        continue
                    ratio = max((xB[i] - lbB[i]) / -move[i], 0.0)
                    to_upper = False
                else:
                    if not math.isfinite(ubB[i]):
                        continue
                    ratio = max((ubB[i] - xB[i]) / move[i], 0.0)
                    to_upper = True
                if ratio < theta - 1e-12 or (
                        ratio <= theta + 1e-12 and leave >= 0 and self.basis[i] < self.basis[leave]):
                    theta, leave, leave_to_upper = ratio, int(i), to_upper
            if not math.isfinite(theta):
                return "unbounded"

            self.iterations += 1
            if theta <= 1e-12:
                degenerate += 1
                if degenerate >= DEGENERATE_RUN and not bland:
                    logger.debug("switching to Bland's rule after %d degenerate pivots", degenerate)
                    bland = True
            else:
                degenerate = 0

            self.x[self.basis] = xB + theta * move
            self.x[j] += delta * theta
            if leave < 0:  # bound flip of the entering variable
                if delta > 0:
                    self.x[j], self.state[j] = self.ub[j], AT_UPPER
                else:
                    self.x[j], self.state[j] = self.lb[j], AT_LOWER
                continue

            out = int(self.basis[leave])
            if leave_to_upper:
                self.x[out], self.state[out] = self.ub[out], AT_UPPER
            else:
                self.x[out], self.state[out] = self.lb[out], AT_LOWER
            self.basis[leave] = j
            self.state[j] = BASIC
            self.factor.push(leave, w)
            self.pivots_since_refactor += 1

    def solve(self) -> LpSolution:
        n, m = self.n, self.m
        art = np.arange(n + m, n + 2 * m)
        cost1 = np.zeros(self.N)
        cost1[art] = 1.0
        self._run_phase(cost1)
        infeas = float(self.x[art].sum())
        scale = max(1.0, float(np.abs(self.b).max(initial=0.0)))
        if infeas > self.tol.feasibility * scale:
            return self._result(LpStatus.INFEASIBLE)

        # artificials are pinned to zero for phase two
        self.ub[art] = 0.0
        self.x[art] = np.where(self.state[art] == BASIC, self.x[art], 0.0)
        self.state[art] = np.where(self.state[art] == BASIC, BASIC, AT_LOWER)
        cost2 = np.zeros(self.N)
        cost2[:n] = self.lp.c
        outcome = self._run_phase(cost2)
        if outcome == "unbounded":
            return self._result(LpStatus.UNBOUNDED)
        self._refactor()
        return self._result(LpStatus.OPTIMAL)

    def _result(self, status: LpStatus) -> LpSolution:
        x = self.x[: self.n].copy()
        if status is LpStatus.OPTIMAL:
            # snap tiny bound excursions caused by round-off
            x = np.clip(x, self.lp.lb, self.lp.ub)
            obj = float(self.lp.c @ x)
        elif status is LpStatus.UNBOUNDED:
            obj = -math.inf
        else:
            obj = math.inf
        return LpSolution(status, obj, x, constraint_violation(self.lp, x),
                          iterations=self.iterations, backend="simplex")


def solve_simplex(lp: LinearProgram, tol: ToleranceSet | None = None) -> LpSolution:
    return _Simplex(lp, tol or ToleranceSet()).solve()

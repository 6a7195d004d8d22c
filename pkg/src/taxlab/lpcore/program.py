"""Sparse linear program container and an independent residual checker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

LE, EQ, GE = "L", "E", "G"
_VALID_SENSES = frozenset((LE, EQ, GE))


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class SolverError(RuntimeError):
    """Raised when a solver cannot certify a result."""


class IterationLimitError(SolverError):
    pass


@dataclass(frozen=True)
class ToleranceSet:
    feasibility: float = 1e-7
    optimality: float = 1e-7
    pivot: float = 1e-9
    iteration_factor: int = 50


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``min c.x`` subject to ``A x (<=|=|>=) rhs`` and ``lb <= x <= ub``.

    ``sense`` holds one of ``"L"``, ``"E"``, ``"G"`` per row.  Bounds may be
    infinite.  Instances are treated as immutable after construction.
    """

    c: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    var_names: Optional[Sequence[str]] = None
    row_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        n = c.shape[0]
        A = sp.csr_matrix(self.A, dtype=float)
        if A.shape[0] == 0:
            A = sp.csr_matrix((0, n))
        if A.shape[1] != n:
            raise ValueError(f"constraint matrix has {A.shape[1]} columns, expected {n}")
        sense = np.asarray(self.sense, dtype="<U1").reshape(-1)
        rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        if sense.shape[0] != A.shape[0] or rhs.shape[0] != A.shape[0]:
            raise ValueError("sense/rhs length does not match number of rows")
        bad = set(np.unique(sense)) - _VALID_SENSES
        if bad:
            raise ValueError(f"unknown row relation(s) {sorted(bad)}")
        lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        if np.any(lb > ub):
            j = int(np.argmax(lb > ub))
            raise ValueError(f"variable {self.var_label(j)} has lower bound {lb[j]} > upper bound {ub[j]}")
        if np.any(np.isnan(c)) or np.any(np.isnan(rhs)) or np.any(np.isnan(A.data)):
            raise ValueError("NaN in linear program data")
        for arr in (c, rhs, lb, ub):
            arr.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sense", sense)
        object.__setattr__(self, "rhs", rhs)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def num_vars(self) -> int:
        return self.c.shape[0]

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    def var_label(self, j: int) -> str:
        if self.var_names is not None:
            return str(self.var_names[j])
        return f"x{j}"

    def row_label(self, i: int) -> str:
        if self.row_names is not None:
            return str(self.row_names[i])
        return f"r{i}"

    def scaled_objective(self, factor: float) -> "LinearProgram":
        return LinearProgram(self.c * factor, self.A, self.sense, self.rhs, self.lb, self.ub,
                             self.var_names, self.row_names)


@dataclass
class LpSolution:
    status: LpStatus
    objective_value: float
    primal: np.ndarray
    max_constraint_violation: float
    iterations: int = 0
    backend: str = ""
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def constraint_violation(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest absolute violation of any row or bound at ``x``.

    Deliberately shares no code with the solvers so it can audit them.
    """
    x = np.asarray(x, dtype=float)
    worst = 0.0
    if lp.num_rows:
        act = lp.A @ x
        diff = act - lp.rhs
        viol = np.where(lp.sense == LE, np.maximum(diff, 0.0),
                        np.where(lp.sense == GE, np.maximum(-diff, 0.0), np.abs(diff)))
        worst = max(worst, float(viol.max(initial=0.0)))
    with np.errstate(invalid="ignore"):
        lo = np.where(np.isfinite(lp.lb), lp.lb - x, 0.0)
        hi = np.where(np.isfinite(lp.ub), x - lp.ub, 0.0)
    worst = max(worst, float(lo.max(initial=0.0)), float(hi.max(initial=0.0)))
    return worst


def _fmt(v: float) -> str:
    if v == math.inf:
        return "+inf"
    if v == -math.inf:
        return "-inf"
    return repr(float(v))


def to_lp_text(lp: LinearProgram) -> str:
    """Render the program in CPLEX-LP style text (objective, rows, bounds)."""
    names = [lp.var_label(j).replace(" ", "_") for j in range(lp.num_vars)]

    def expr(idx, vals):
        parts = []
        for j, v in zip(idx, vals):
            sign = "-" if v < 0 else "+"
            parts.append(f"{sign} {_fmt(abs(v))} {names[j]}")
        return " ".join(parts) if parts else "0 x0"

    nz = np.flatnonzero(lp.c)
    lines = ["Minimize", f" obj: {expr(nz, lp.c[nz])}", "Subject To"]
    ops = {LE: "<=", EQ: "=", GE: ">="}
    A = lp.A
    for i in range(lp.num_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        lines.append(f" {lp.row_label(i)}: {expr(A.indices[lo:hi], A.data[lo:hi])} "
                     f"{ops[lp.sense[i]]} {_fmt(lp.rhs[i])}")
    lines.append("Bounds")
    for j in range(lp.num_vars):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == -math.inf and hi == math.inf:
            lines.append(f" {names[j]} free")
        else:
            lines.append(f" {_fmt(lo)} <= {names[j]} <= {_fmt(hi)}")
    lines.append("End")
    return "\n".join(lines) + "\n"

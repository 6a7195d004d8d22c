"""Rolling-horizon driver that stitches consecutive overlapping LP blocks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol

import numpy as np

from .program import LinearProgram, LpSolution, ToleranceSet
from .solve import solve


class BlockInfeasible(RuntimeError):
    def __init__(self, start_hour: int, status: str):
        super().__init__(f"block starting at hour {start_hour} is {status}")
        self.start_hour = start_hour
        self.status = status


class BlockModel(Protocol):
    """What a builder returns for one window ``[t0, t1)``.

    ``hour_of_var`` maps every LP column to its hour offset inside the window
    (or -1 for columns that are not tied to an hour).  ``extract`` turns a
    primal vector into named hourly arrays; the keys in ``state_keys`` are the
    storage states carried into the next block.
    """

    lp: LinearProgram
    hour_of_var: np.ndarray
    state_keys: tuple[str, ...]

    def extract(self, primal: np.ndarray) -> dict[str, np.ndarray]: ...


Builder = Callable[[int, int, Mapping[str, float], bool], BlockModel]


@dataclass
class StitchedSolution:
    series: dict[str, np.ndarray]
    objective_value: float
    blocks: list[tuple[int, int, int]] = field(default_factory=list)  # (t0, t1, kept)
    solutions: list[LpSolution] = field(default_factory=list)


def block_plan(horizon: int, block: int, overlap: int) -> list[tuple[int, int, int]]:
    """Windows ``(t0, t1, kept_hours)``; the last window keeps everything."""
    if not block > overlap >= 0:
        raise ValueError(f"need block > overlap >= 0, got block={block}, overlap={overlap}")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    plan = []
    t0 = 0
    step = block - overlap
    while True:
        t1 = min(t0 + block, horizon)
        if t1 >= horizon:
            plan.append((t0, horizon, horizon - t0))
            return plan
        plan.append((t0, t1, step))
        t0 += step


def solve_rolling(builder: Builder, horizon: int, block: int, overlap: int,
                  init_states: Mapping[str, float], tol: ToleranceSet | None = None,
                  backend: str = "highs", keep_solutions: bool = False) -> StitchedSolution:
    """Solve ``horizon`` hours as a chain of blocks with carried storage states.

    With ``block >= horizon`` this is a single solve and the result equals it
    bit for bit.
    """
    plan = block_plan(horizon, block, overlap)
    states = dict(init_states)
    pieces: dict[str, list[np.ndarray]] = {}
    objective = 0.0
    sols = []
    for t0, t1, kept in plan:
        final = t1 >= horizon
        model = builder(t0, t1, states, final)
        sol = solve(model.lp, tol, backend=backend)
        if not sol.optimal:
            raise BlockInfeasible(t0, sol.status.value)
        series = model.extract(sol.primal)
        if len(plan) == 1:
            objective = sol.objective_value
        else:
            mask = (model.hour_of_var >= 0) & (model.hour_of_var < kept)
            objective += float(model.lp.c[mask] @ sol.primal[mask])
        for key, arr in series.items():
            pieces.setdefault(key, []).append(arr[:kept])
        for key in model.state_keys:
            states[key] = float(series[key][kept - 1])
        if keep_solutions:
            sols.append(sol)
    stitched = {k: (v[0] if len(v) == 1 else np.concatenate(v)) for k, v in pieces.items()}
    return StitchedSolution(stitched, objective, plan, sols)

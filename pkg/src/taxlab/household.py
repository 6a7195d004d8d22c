"""Per-household dispatch LP: assembly, solution extraction and balance audit.

Flows are in kWh per hour (kWh_th for heat).  Names read ``source_to_sink``
with ``mp`` the meter point, ``pv`` the rooftop array, ``bt`` the stationary
battery, ``ev`` the vehicle, ``hp`` the heat pump, ``hst`` the heat store and
``co`` the inflexible household demand.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import scipy.sparse as sp

from .lpcore import LinearProgram, StitchedSolution, ToleranceSet, solve_rolling
from .policy import TaxPolicy
from .population import Household
from .timeseries import ExogenousSeries

FLOWS = (
    "mp_to_bt", "mp_to_ev", "mp_to_hp", "mp_to_co", "import_total",
    "pv_total", "pv_to_bt", "pv_to_ev", "pv_to_hp", "pv_to_co", "pv_to_mp",
    "bt_to_co", "bt_to_ev", "bt_to_hp", "bt_to_mp",
    "hp_to_hst_th", "hp_to_co_th", "hst_to_co_th",
    "soc_bt", "soc_ev", "soc_hst_th",
)
K = {name: k for k, name in enumerate(FLOWS)}
STATE_KEYS = ("soc_bt", "soc_ev", "soc_hst_th")
ENERGY_FLOWS = tuple(f for f in FLOWS if not f.startswith("soc_"))

DEFAULT_BLOCK = 336
DEFAULT_OVERLAP = 48


@dataclass(frozen=True)
class EfficiencySet:
    eta_ch_bt: float = 0.95
    eta_ch_ev: float = 0.90
    eta_hst: float = 0.95

    def __post_init__(self):
        for name, v in dataclasses.asdict(self).items():
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")


def default_initial_states(hh: Household, series: ExogenousSeries) -> dict[str, float]:
    park = hh.park
    ev_home = series.horizon_hours == 0 or series.ev_available[0] == 1
    return {
        "soc_bt": 0.5 * park.battery_kwh,
        "soc_ev": park.ev_battery_kwh if ev_home else 0.2 * park.ev_battery_kwh,
        "soc_hst_th": 0.5 * park.hst_kwh_th,
    }


class HouseholdBlock:
    """LP for hours ``[t0, t1)`` of one household under one policy."""

    state_keys = STATE_KEYS

    def __init__(self, lp: LinearProgram, T: int, t0: int):
        self.lp = lp
        self.T = T
        self.t0 = t0
        self.hour_of_var = np.tile(np.arange(T), len(FLOWS))

    def extract(self, primal: np.ndarray) -> dict[str, np.ndarray]:
        x = np.asarray(primal).reshape(len(FLOWS), self.T)
        return {name: x[k].copy() for k, name in enumerate(FLOWS)}


class _RowBuilder:
    def __init__(self, T: int):
        self.T = T
        self.rows, self.cols, self.vals = [], [], []
        self.sense, self.rhs, self.names = [], [], []
        self.n_rows = 0

    def add(self, family: str, terms, sense: str, rhs, hours=None):
        """One row per hour in ``hours``; ``terms`` are ``(flow, coef, lag)`` with lag 0 or 1."""
        T = self.T
        hours = np.arange(T) if hours is None else np.asarray(hours, dtype=int)
        if hours.size == 0:
            return
        row_ids = self.n_rows + np.arange(hours.size)
        for flow, coef, lag in terms:
            coef = np.broadcast_to(np.asarray(coef, dtype=float), (T,))[hours]
            t = hours - lag
            ok = (t >= 0) & (coef != 0)
            self.rows.append(row_ids[ok])
            self.cols.append(K[flow] * T + t[ok])
            self.vals.append(coef[ok])
        self.sense.append(np.full(hours.size, sense))
        self.rhs.append(np.broadcast_to(np.asarray(rhs, dtype=float), (T,))[hours])
        self.names.extend(f"{family}[{h}]" for h in hours)
        self.n_rows += hours.size

    def matrix(self, n_vars: int):
        A = sp.csr_matrix((np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                          shape=(self.n_rows, n_vars))
        return A, np.concatenate(self.sense), np.concatenate(self.rhs)


def build_lp(hh: Household, series: ExogenousSeries, policy: TaxPolicy, eff: EfficiencySet = EfficiencySet(),
             window: Optional[tuple[int, int]] = None, init_states: Optional[Mapping[str, float]] = None,
             terminal_rule: Optional[Mapping[str, float]] = None, names: bool = False) -> HouseholdBlock:
    """Assemble the dispatch LP for one window.

    ``terminal_rule`` maps a storage state to the minimum value it must hold
    at the end of the window (used on the horizon's last block).
    """
    H = series.horizon_hours
    t0, t1 = window if window is not None else (0, H)
    if not 0 <= t0 < t1 <= H:
        raise ValueError(f"window [{t0}, {t1}) outside series of {H} hours")
    s = series.window(t0, t1) if (t0, t1) != (0, H) else series
    park = hh.park
    T = t1 - t0
    n = len(FLOWS) * T
    init = dict(default_initial_states(hh, series) if init_states is None else init_states)
    for key, cap in (("soc_bt", park.battery_kwh), ("soc_ev", park.ev_battery_kwh),
                     ("soc_hst_th", park.hst_kwh_th)):
        if not -1e-9 <= init[key] <= cap + 1e-9:
            raise ValueError(f"initial {key}={init[key]} outside [0, {cap}]")
        init[key] = min(max(init[key], 0.0), cap)

    lb = np.zeros(n)
    ub = np.full(n, np.inf)

    def bound(flow, upper=None, lower=None):
        sl = slice(K[flow] * T, (K[flow] + 1) * T)
        if upper is not None:
            ub[sl] = upper
        if lower is not None:
            lb[sl] = lower

    avail = s.ev_available.astype(float)
    pv_avail = park.pv_kwp * s.solar_norm
    bound("import_total", park.fuse_kw)
    for f in ("mp_to_bt", "mp_to_ev", "mp_to_hp", "mp_to_co"):
        bound(f, park.fuse_kw)
    for f in ("pv_total", "pv_to_bt", "pv_to_ev", "pv_to_hp", "pv_to_co", "pv_to_mp"):
        bound(f, pv_avail)
    for f in ("mp_to_bt", "pv_to_bt", "bt_to_co", "bt_to_ev", "bt_to_hp", "bt_to_mp"):
        bound(f, np.minimum(ub[K[f] * T:(K[f] + 1) * T], park.battery_charge_kw))
    for f in ("mp_to_ev", "pv_to_ev", "bt_to_ev"):
        bound(f, np.minimum(ub[K[f] * T:(K[f] + 1) * T], park.ev_charger_kw * avail))
    for f in ("mp_to_hp", "pv_to_hp", "bt_to_hp"):
        bound(f, np.minimum(ub[K[f] * T:(K[f] + 1) * T], park.hp_kw_el))
    bound("hp_to_hst_th", park.hst_charge_kw_th)
    bound("hst_to_co_th", park.hst_charge_kw_th)
    bound("soc_bt", park.battery_kwh)
    bound("soc_ev", park.ev_battery_kwh)
    bound("soc_hst_th", park.hst_kwh_th)
    dep = s.departure_hours
    lb[K["soc_ev"] * T + dep] = park.ev_battery_kwh
    if terminal_rule:
        for key, floor in terminal_rule.items():
            j = K[key] * T + T - 1
            cap = ub[j]
            lb[j] = max(lb[j], min(floor, cap))

    rb = _RowBuilder(T)
    rb.add("demand", [("mp_to_co", 1, 0), ("pv_to_co", 1, 0), ("bt_to_co", 1, 0)], "E", s.base_kwh)
    rb.add("import_sum", [("import_total", 1, 0), ("mp_to_bt", -1, 0), ("mp_to_ev", -1, 0),
                          ("mp_to_hp", -1, 0), ("mp_to_co", -1, 0)], "E", 0.0)
    rb.add("pv_split", [("pv_total", 1, 0)] + [(f, -1, 0) for f in
                                               ("pv_to_bt", "pv_to_ev", "pv_to_hp", "pv_to_co", "pv_to_mp")],
           "E", 0.0)

    e_bt = eff.eta_ch_bt
    first = np.zeros(T)
    first[0] = 1.0
    rb.add("battery_soc", [("soc_bt", 1, 0), ("soc_bt", -1, 1), ("mp_to_bt", -e_bt, 0), ("pv_to_bt", -e_bt, 0)]
           + [(f, 1 / e_bt, 0) for f in ("bt_to_co", "bt_to_ev", "bt_to_hp", "bt_to_mp")],
           "E", first * init["soc_bt"])
    rb.add("battery_power", [(f, 1, 0) for f in ("bt_to_co", "bt_to_ev", "bt_to_hp", "bt_to_mp",
                                                 "mp_to_bt", "pv_to_bt")], "L", park.battery_charge_kw)

    e_ev = eff.eta_ch_ev
    ev_in = [("mp_to_ev", 1, 0), ("pv_to_ev", 1, 0), ("bt_to_ev", 1, 0)]
    rb.add("ev_soc", [("soc_ev", 1, 0), ("soc_ev", -1, 1)] + [(f, -e_ev, 0) for f, _, _ in ev_in],
           "E", first * init["soc_ev"] - s.ev_trip_kwh)
    rb.add("ev_charger", ev_in, "L", park.ev_charger_kw * avail)
    forced = np.flatnonzero(s.ev_forced_kwh > 0)
    rb.add("ev_forced", ev_in, "G", s.ev_forced_kwh, hours=forced)

    hp_in = [("mp_to_hp", 1, 0), ("pv_to_hp", 1, 0), ("bt_to_hp", 1, 0)]
    rb.add("heat_pump", [("hp_to_hst_th", 1, 0), ("hp_to_co_th", 1, 0)] + [(f, -s.cop, 0) for f, _, _ in hp_in],
           "E", 0.0)
    rb.add("heat_pump_capacity", hp_in, "L", park.hp_kw_el)
    e_h = eff.eta_hst
    rb.add("hst_soc", [("soc_hst_th", 1, 0), ("soc_hst_th", -1, 1), ("hp_to_hst_th", -e_h, 0),
                       ("hst_to_co_th", 1 / e_h, 0)], "E", first * init["soc_hst_th"])
    rb.add("heat_demand", [("hst_to_co_th", 1, 0), ("hp_to_co_th", 1, 0)], "E", s.heat_kwh)

    A, sense, rhs = rb.matrix(n)

    tau = policy.tax_eur_per_kwh
    beta = policy.beta_n
    p = s.price
    c = np.zeros(n)
    c[K["import_total"] * T:(K["import_total"] + 1) * T] = p + policy.grid_eur_per_kwh + tau
    c[K["pv_total"] * T:(K["pv_total"] + 1) * T] = beta * tau
    for f in ("pv_to_mp", "bt_to_mp"):
        c[K[f] * T:(K[f] + 1) * T] = -(p + beta * tau)

    var_names = row_names = None
    if names:
        var_names = [f"{f}[{t0 + t}]" for f in FLOWS for t in range(T)]
        row_names = rb.names
    lp = LinearProgram(c, A, sense, rhs, lb, ub, var_names, row_names)
    return HouseholdBlock(lp, T, t0)


@dataclass(eq=False)
class DispatchSolution:
    mp_to_bt: np.ndarray
    mp_to_ev: np.ndarray
    mp_to_hp: np.ndarray
    mp_to_co: np.ndarray
    import_total: np.ndarray
    pv_total: np.ndarray
    pv_to_bt: np.ndarray
    pv_to_ev: np.ndarray
    pv_to_hp: np.ndarray
    pv_to_co: np.ndarray
    pv_to_mp: np.ndarray
    bt_to_co: np.ndarray
    bt_to_ev: np.ndarray
    bt_to_hp: np.ndarray
    bt_to_mp: np.ndarray
    hp_to_hst_th: np.ndarray
    hp_to_co_th: np.ndarray
    hst_to_co_th: np.ndarray
    soc_bt: np.ndarray
    soc_ev: np.ndarray
    soc_hst_th: np.ndarray
    initial_states: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], initial_states: Mapping[str, float]):
        return cls(**{f: np.asarray(arrays[f], dtype=float) for f in FLOWS}, initial_states=dict(initial_states))

    @classmethod
    def zeros(cls, T: int) -> "DispatchSolution":
        return cls.from_arrays({f: np.zeros(T) for f in FLOWS}, {k: 0.0 for k in STATE_KEYS})

    @property
    def horizon_hours(self) -> int:
        return int(self.import_total.shape[0])

    def copy(self) -> "DispatchSolution":
        return DispatchSolution.from_arrays({f: getattr(self, f).copy() for f in FLOWS}, self.initial_states)

    def annual_flows(self) -> dict[str, float]:
        return {f: float(getattr(self, f).sum()) for f in ENERGY_FLOWS}

    def to_csv(self, path: Path) -> None:
        cols = [getattr(self, f) for f in FLOWS]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("hour",) + FLOWS)
            for t in range(self.horizon_hours):
                w.writerow([t] + [repr(float(c[t])) for c in cols])


@dataclass
class HouseholdResult:
    solution: DispatchSolution
    objective_value: float
    stitched: StitchedSolution


def solve_household(hh: Household, series: ExogenousSeries, policy: TaxPolicy,
                    eff: EfficiencySet = EfficiencySet(), block: int = DEFAULT_BLOCK,
                    overlap: int = DEFAULT_OVERLAP, tol: Optional[ToleranceSet] = None,
                    backend: str = "highs", init_states: Optional[Mapping[str, float]] = None,
                    keep_solutions: bool = False) -> HouseholdResult:
    """Dispatch over the whole series, rolling in blocks when it is longer than ``block``.

    The last block must leave the battery and heat store at least as full as
    they started.
    """
    H = series.horizon_hours
    init = dict(default_initial_states(hh, series) if init_states is None else init_states)
    terminal = {"soc_bt": init["soc_bt"], "soc_hst_th": init["soc_hst_th"]}

    def builder(t0, t1, states, final):
        return build_lp(hh, series, policy, eff, (t0, t1), states, terminal if final else None)

    if block >= H:
        block, overlap = H, 0
    stitched = solve_rolling(builder, H, block, overlap, init, tol, backend, keep_solutions)
    sol = DispatchSolution.from_arrays(stitched.series, init)
    return HouseholdResult(sol, stitched.objective_value, stitched)


# --- independent audit --------------------------------------------------------------------

AUDIT_FAMILIES = (
    "nonnegativity", "demand", "import_sum", "fuse", "pv_split", "pv_limit",
    "battery_soc", "battery_capacity", "battery_power",
    "ev_soc", "ev_capacity", "ev_departure", "ev_charger", "ev_forced",
    "heat_pump", "heat_pump_capacity", "hst_soc", "hst_capacity", "hst_rate", "heat_demand",
)


@dataclass
class AuditReport:
    residuals: dict[str, float]
    tol: float

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.residuals.items() if not v <= self.tol]

    @property
    def ok(self) -> bool:
        return not self.failed

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())


def _lagged(soc: np.ndarray, init: float) -> np.ndarray:
    prev = np.empty_like(soc)
    prev[0] = init
    prev[1:] = soc[:-1]
    return prev


def verify_balances(sol: DispatchSolution, series: ExogenousSeries, hh: Household,
                    eff: EfficiencySet = EfficiencySet(), tol: float = 1e-6) -> AuditReport:
    """Recompute every balance and limit from the dispatch alone.

    Shares no code with :func:`build_lp`; residuals are absolute kWh, with
    one-sided limits reported as their positive excess.
    """
    park = hh.park
    g = sol
    s = series
    if g.horizon_hours != s.horizon_hours:
        raise ValueError("solution and series horizons differ")
    init = sol.initial_states
    r = {}

    def excess(x):
        return float(np.max(np.clip(x, 0.0, None), initial=0.0))

    def absmax(x):
        return float(np.max(np.abs(x), initial=0.0))

    r["nonnegativity"] = max(excess(-getattr(g, f)) for f in FLOWS)
    r["demand"] = absmax(g.mp_to_co + g.pv_to_co + g.bt_to_co - s.base_kwh)
    r["import_sum"] = absmax(g.import_total - (g.mp_to_bt + g.mp_to_ev + g.mp_to_hp + g.mp_to_co))
    r["fuse"] = excess(g.import_total - park.fuse_kw)
    r["pv_split"] = absmax(g.pv_total - (g.pv_to_bt + g.pv_to_ev + g.pv_to_hp + g.pv_to_co + g.pv_to_mp))
    r["pv_limit"] = excess(g.pv_total - park.pv_kwp * s.solar_norm)

    bt_out = g.bt_to_co + g.bt_to_ev + g.bt_to_hp + g.bt_to_mp
    bt_in = g.mp_to_bt + g.pv_to_bt
    r["battery_soc"] = absmax(g.soc_bt - _lagged(g.soc_bt, init.get("soc_bt", 0.0))
                              - eff.eta_ch_bt * bt_in + bt_out / eff.eta_ch_bt)
    r["battery_capacity"] = excess(g.soc_bt - park.battery_kwh)
    r["battery_power"] = excess(bt_in + bt_out - park.battery_charge_kw)

    ev_in = g.mp_to_ev + g.pv_to_ev + g.bt_to_ev
    r["ev_soc"] = absmax(g.soc_ev - _lagged(g.soc_ev, init.get("soc_ev", 0.0))
                         - eff.eta_ch_ev * ev_in + s.ev_trip_kwh)
    r["ev_capacity"] = excess(g.soc_ev - park.ev_battery_kwh)
    dep = np.asarray(s.departure_hours, dtype=int)
    r["ev_departure"] = absmax(g.soc_ev[dep] - park.ev_battery_kwh) if dep.size else 0.0
    r["ev_charger"] = excess(ev_in - park.ev_charger_kw * s.ev_available)
    r["ev_forced"] = excess(s.ev_forced_kwh - ev_in)

    hp_in = g.mp_to_hp + g.pv_to_hp + g.bt_to_hp
    r["heat_pump"] = absmax(g.hp_to_hst_th + g.hp_to_co_th - s.cop * hp_in)
    r["heat_pump_capacity"] = excess(hp_in - park.hp_kw_el)
    r["hst_soc"] = absmax(g.soc_hst_th - _lagged(g.soc_hst_th, init.get("soc_hst_th", 0.0))
                          - eff.eta_hst * g.hp_to_hst_th + g.hst_to_co_th / eff.eta_hst)
    r["hst_capacity"] = excess(g.soc_hst_th - park.hst_kwh_th)
    r["hst_rate"] = max(excess(g.hp_to_hst_th - park.hst_charge_kw_th),
                        excess(g.hst_to_co_th - park.hst_charge_kw_th))
    r["heat_demand"] = absmax(g.hst_to_co_th + g.hp_to_co_th - s.heat_kwh)
    return AuditReport(r, tol)


def self_consumption_share(sol: DispatchSolution) -> Optional[float]:
    """Share of electric load (appliances, EV charging, heat pump) met by own PV.

    Battery discharge to loads counts as PV in proportion to the PV share of
    battery charging, so battery losses and battery exports are excluded.
    Returns ``None`` when there is no load.
    """
    load = float(np.sum(sol.mp_to_co + sol.pv_to_co + sol.bt_to_co)
                 + np.sum(sol.mp_to_ev + sol.pv_to_ev + sol.bt_to_ev)
                 + np.sum(sol.mp_to_hp + sol.pv_to_hp + sol.bt_to_hp))
    if load <= 0:
        return None
    charged = float(np.sum(sol.pv_to_bt) + np.sum(sol.mp_to_bt))
    pv_frac = float(np.sum(sol.pv_to_bt)) / charged if charged > 0 else 0.0
    direct = float(np.sum(sol.pv_to_co + sol.pv_to_ev + sol.pv_to_hp))
    from_battery = float(np.sum(sol.bt_to_co + sol.bt_to_ev + sol.bt_to_hp))
    return (direct + pv_frac * from_battery) / load

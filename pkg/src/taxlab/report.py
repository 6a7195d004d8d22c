"""Analytics tables computed from a result store.  Nothing here solves an LP."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .batch import ResultStore
from .policy import tax_revenue
from .population import AreaBand, CategoryKey, IncomeBand, Occupancy

REL_FLOOR_EUR = 0.01
SOURCES = ("MP", "PV", "BT")
SINKS = ("MP", "PV", "BT", "CO", "EV", "HP")
_FLOW_OF = {
    ("MP", "BT"): "mp_to_bt", ("MP", "CO"): "mp_to_co", ("MP", "EV"): "mp_to_ev", ("MP", "HP"): "mp_to_hp",
    ("PV", "MP"): "pv_to_mp", ("PV", "BT"): "pv_to_bt", ("PV", "CO"): "pv_to_co", ("PV", "EV"): "pv_to_ev",
    ("PV", "HP"): "pv_to_hp",
    ("BT", "MP"): "bt_to_mp", ("BT", "CO"): "bt_to_co", ("BT", "EV"): "bt_to_ev", ("BT", "HP"): "bt_to_hp",
}

# Reference values from the Danish smart-meter study; printed for comparison only.
REFERENCE = {
    "bau_total_min_eur": 731.0,
    "bau_total_max_eur": 2502.0,
    "ntax_minus_bau_category_min_eur": 381.0,
    "ntax_minus_bau_category_max_eur": 759.0,
    "ntax38_saver_share": 0.61,
    "ntax38_reduction": 0.38,
    "bau_self_consumption_low": 0.30,
    "bau_self_consumption_high": 0.44,
    "flows_mp_sum_kwh": 91.9,
    "flows_pv_to_bt_kwh": -113.3,
    "flows_bt_sum_kwh": -99.3,
}


class ReportError(ValueError):
    pass


def _components(recs) -> pd.DataFrame:
    rows = [{"household_id": r.household_id, "category": r.category,
             "electricity": r.breakdown.electricity_cost, "grid": r.breakdown.grid_tariff_cost,
             "tax_net": r.breakdown.tax_net, "total": r.breakdown.total} for r in recs.values()]
    if not rows:
        return pd.DataFrame(columns=["household_id", "category", "electricity", "grid", "tax_net", "total"])
    return pd.DataFrame(rows)


def _scenario(store: ResultStore, name: str):
    try:
        return store.scenario(name)
    except KeyError as exc:
        raise ReportError(str(exc)) from None


def sorted_cost_curve(store: ResultStore, scenario: str) -> pd.DataFrame:
    """Households ascending by total cost (ties by id), with stacked components."""
    df = _components(_scenario(store, scenario))
    df = df.sort_values(["total", "household_id"], kind="mergesort").reset_index(drop=True)
    df.insert(0, "rank", np.arange(1, len(df) + 1))
    return df[["rank", "household_id", "electricity", "grid", "tax_net", "total"]]


def _paired(store, base, alt):
    b = _scenario(store, base)
    a = _scenario(store, alt)
    if set(a) != set(b):
        missing = sorted(set(a) ^ set(b))
        raise ReportError(f"household sets of {base} and {alt} differ (e.g. {missing[0]})")
    return b, a


def _rel(alt, base):
    out = (alt - base) / np.abs(base)
    return np.where(np.abs(base) < REL_FLOOR_EUR, np.nan, out)


def relative_difference_curve(store: ResultStore, base: str, alt: str) -> pd.DataFrame:
    """Per-household relative deltas in the base scenario's sorted order.

    Relative differences below ``REL_FLOOR_EUR`` of base are reported as NaN.
    """
    _paired(store, base, alt)
    order = sorted_cost_curve(store, base)
    a = _components(_scenario(store, alt)).set_index("household_id").loc[order["household_id"]]
    out = pd.DataFrame({"rank": order["rank"].to_numpy(), "household_id": order["household_id"].to_numpy()})
    for comp in ("tax_net", "grid", "electricity", "total"):
        bv = order[comp].to_numpy()
        av = a[comp].to_numpy()
        out[f"rel_{comp}"] = _rel(av, bv)
        out[f"delta_{comp}"] = av - bv
    return out


@dataclass
class CategoryDelta:
    mean: pd.DataFrame  # occupancy x area band, EUR/yr, NaN where empty
    count: pd.DataFrame
    income_filter: Optional[str]
    by_income: dict

    def to_frame(self) -> pd.DataFrame:
        m = self.mean.stack(future_stack=True).rename("mean_delta_eur")
        c = self.count.stack(future_stack=True).rename("households")
        df = pd.concat([m, c], axis=1).reset_index()
        df.columns = ["occupancy", "area_band", "mean_delta_eur", "households"]
        df.insert(0, "income", self.income_filter or "all")
        return df


def _category_grid(deltas: pd.DataFrame):
    occ = [o.value for o in Occupancy]
    areas = [a.value for a in AreaBand]
    mean = pd.DataFrame(np.nan, index=pd.Index(occ, name="occupancy"), columns=pd.Index(areas, name="area"))
    count = pd.DataFrame(0, index=mean.index, columns=mean.columns)
    if len(deltas):
        g = deltas.groupby(["occupancy", "area"])["delta"]
        for (o, a), v in g.mean().items():
            mean.loc[o, a] = v
        for (o, a), v in g.size().items():
            count.loc[o, a] = int(v)
    return mean, count


def category_delta_matrix(store: ResultStore, base: str, alt: str,
                          income_filter: Optional[str] = None) -> CategoryDelta:
    """Mean alt - base total cost per occupancy x area cell."""
    if income_filter is not None and income_filter not in {i.value for i in IncomeBand}:
        raise ReportError(f"unknown income band {income_filter!r}")
    b, a = _paired(store, base, alt)
    rows = []
    for hid, rb in b.items():
        cat = CategoryKey.parse(rb.category)
        rows.append({"occupancy": cat.occupancy.value, "area": cat.area_band.value,
                     "income": cat.income_band.value, "delta": a[hid].breakdown.total - rb.breakdown.total})
    df = pd.DataFrame(rows, columns=["occupancy", "area", "income", "delta"])
    by_income = {}
    for inc in IncomeBand:
        by_income[inc.value] = _category_grid(df[df["income"] == inc.value])[0]
    sel = df if income_filter is None else df[df["income"] == income_filter]
    mean, count = _category_grid(sel)
    return CategoryDelta(mean, count, income_filter, by_income)


def flow_matrix(flows_per_household: Sequence[dict]) -> pd.DataFrame:
    """Mean annual from->to flows with Sum row and column."""
    n = len(flows_per_household)
    M = np.zeros((len(SOURCES), len(SINKS)))
    for (src, dst), key in _FLOW_OF.items():
        M[SOURCES.index(src), SINKS.index(dst)] = sum(f[key] for f in flows_per_household) / n if n else 0.0
    full = np.zeros((4, 7))
    full[:3, :6] = M
    full[:3, 6] = M.sum(axis=1)
    full[3, :] = full[:3, :].sum(axis=0)
    return pd.DataFrame(full, index=pd.Index(SOURCES + ("Sum",), name="from"),
                        columns=pd.Index(SINKS + ("Sum",), name="to"))


def flow_delta_matrix(store: ResultStore, base: str, alt: str) -> pd.DataFrame:
    """Mean per-household change in annual flow, alt minus base (kWh/yr)."""
    b, a = _paired(store, base, alt)
    diffs = [{k: a[h].flows[k] - b[h].flows[k] for k in _FLOW_OF.values()} for h in sorted(b)]
    return flow_matrix(diffs)


def headline_summary(store: ResultStore, scenarios: Sequence[str]) -> pd.DataFrame:
    """Long table (metric, scenario, value).  The first scenario is the base for deltas."""
    if not scenarios:
        raise ReportError("no scenarios requested")
    rows = []
    recs = {s: _scenario(store, s) for s in scenarios}
    for s, r in recs.items():
        shares = [x.self_consumption for x in r.values() if x.self_consumption is not None]
        rows.append(("households", s, float(len(r))))
        rows.append(("revenue_total_eur", s, tax_revenue([r[h].breakdown for h in sorted(r)]) if r else np.nan))
        rows.append(("mean_total_eur", s, float(np.mean([x.breakdown.total for x in r.values()])) if r else np.nan))
        rows.append(("mean_self_consumption", s, float(np.mean(shares)) if shares else np.nan))
    base = scenarios[0]
    for s in scenarios[1:]:
        _paired(store, base, s)
        d = np.array([recs[s][h].breakdown.total - recs[base][h].breakdown.total for h in sorted(recs[base])])
        rows.append(("saver_share", s, float(np.mean(d < 0))))
        rows.append(("max_delta_eur", s, float(d.max())))
        rows.append(("min_delta_eur", s, float(d.min())))
    if len(scenarios) == 1:
        for m in ("saver_share", "max_delta_eur", "min_delta_eur"):
            rows.append((m, base, np.nan))
    cal = store.calibration
    rows.append(("calibrated_reduction", "", float(cal["reduction"]) if cal else np.nan))
    return pd.DataFrame(rows, columns=["metric", "scenario", "value"])


def with_reference(df: pd.DataFrame, keys: Sequence[str]) -> pd.DataFrame:
    """Append clearly labelled reference rows under a ``source`` column."""
    out = df.copy()
    out["source"] = "desk"
    ref = pd.DataFrame({"reference_metric": list(keys), "reference_value": [REFERENCE[k] for k in keys]})
    ref["source"] = "reference_danish"
    return pd.concat([out, ref], ignore_index=True, sort=False)


REFERENCE_KEYS = {
    "curve": ("bau_total_min_eur", "bau_total_max_eur"),
    "reldiff": ("ntax38_saver_share",),
    "categories": ("ntax_minus_bau_category_min_eur", "ntax_minus_bau_category_max_eur"),
    "flows": ("flows_mp_sum_kwh", "flows_pv_to_bt_kwh", "flows_bt_sum_kwh"),
    "summary": ("ntax38_saver_share", "ntax38_reduction", "bau_self_consumption_low", "bau_self_consumption_high"),
}

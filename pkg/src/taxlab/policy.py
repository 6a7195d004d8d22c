"""Tax scenarios, per-household cost breakdowns and revenue-neutral calibration."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

logger = logging.getLogger(__name__)

TAX_EUR_PER_KWH = 0.12
# transmission 0.011 + distribution 0.025
GRID_EUR_PER_KWH = 0.036
NTAX38_PLACEHOLDER_FACTOR = 0.62


class PolicyError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaxPolicy:
    name: str
    beta_n: int
    tax_eur_per_kwh: float
    grid_eur_per_kwh: float
    price_mode: str = "base2017"
    placeholder: bool = False  # tax rate not yet locally calibrated

    def __post_init__(self):
        if self.beta_n not in (0, 1):
            raise PolicyError("beta_n must be 0 or 1")
        if self.tax_eur_per_kwh < 0 or self.grid_eur_per_kwh < 0:
            raise PolicyError("tax and grid rates must be non-negative")
        if self.price_mode not in ("base2017", "hi2022"):
            raise PolicyError(f"unknown price mode {self.price_mode!r}")

    def with_tax(self, tax: float, name: Optional[str] = None, placeholder: bool = False) -> "TaxPolicy":
        return dataclasses.replace(self, tax_eur_per_kwh=tax, name=name or self.name,
                                   placeholder=placeholder)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESET_NAMES = ("BAU", "NTAX", "NTAX38", "NTAXHi", "BAUHi")


def preset(name: str, ntax38_factor: Optional[float] = None) -> TaxPolicy:
    """Named scenario.  ``NTAX38`` uses ``ntax38_factor`` if given, else the 0.62 placeholder."""
    bau = TaxPolicy("BAU", 0, TAX_EUR_PER_KWH, GRID_EUR_PER_KWH, "base2017")
    if name == "BAU":
        return bau
    if name == "NTAX":
        return dataclasses.replace(bau, name="NTAX", beta_n=1)
    if name == "NTAX38":
        factor = NTAX38_PLACEHOLDER_FACTOR if ntax38_factor is None else ntax38_factor
        return dataclasses.replace(bau, name="NTAX38", beta_n=1,
                                   tax_eur_per_kwh=TAX_EUR_PER_KWH * factor,
                                   placeholder=ntax38_factor is None)
    if name == "NTAXHi":
        return dataclasses.replace(bau, name="NTAXHi", beta_n=1, price_mode="hi2022")
    if name == "BAUHi":
        return dataclasses.replace(bau, name="BAUHi", price_mode="hi2022")
    raise PolicyError(f"unknown scenario {name!r}; choose from {', '.join(PRESET_NAMES)}")


@dataclass(frozen=True)
class CostBreakdown:
    electricity_cost: float
    grid_tariff_cost: float
    tax_paid: float
    tax_refunded: float

    @property
    def tax_net(self) -> float:
        return self.tax_paid - self.tax_refunded

    @property
    def total(self) -> float:
        return self.electricity_cost + self.grid_tariff_cost + self.tax_paid - self.tax_refunded


def cost_breakdown(sol, policy: TaxPolicy, prices) -> CostBreakdown:
    """Evaluate each cost term of the household objective separately.

    ``sol`` is any object with hourly ``import_total``, ``pv_total``,
    ``pv_to_mp`` and ``bt_to_mp`` arrays.
    """
    p = np.asarray(prices, dtype=float)
    imp = np.asarray(sol.import_total, dtype=float)
    if p.shape != imp.shape:
        raise PolicyError(f"price horizon {p.shape[0]} does not match dispatch horizon {imp.shape[0]}")
    exports = np.asarray(sol.pv_to_mp) + np.asarray(sol.bt_to_mp)
    tau, beta = policy.tax_eur_per_kwh, policy.beta_n
    imports_total = float(imp.sum())
    return CostBreakdown(
        electricity_cost=float(p @ imp - p @ exports),
        grid_tariff_cost=policy.grid_eur_per_kwh * imports_total,
        tax_paid=tau * (imports_total + beta * float(np.sum(sol.pv_total))),
        tax_refunded=beta * tau * float(exports.sum()),
    )


def tax_revenue(breakdowns: Iterable[CostBreakdown]) -> float:
    items = list(breakdowns)
    if not items:
        raise PolicyError("tax revenue of an empty collection is undefined")
    return float(sum(b.tax_paid - b.tax_refunded for b in items))


@dataclass
class CalibrationResult:
    tau_star: float
    tau_bau: float
    bau_revenue: float
    trace: list[tuple[float, float]] = field(default_factory=list)  # (tau, revenue)
    converged: bool = True
    note: str = ""

    @property
    def reduction(self) -> float:
        return 1.0 - self.tau_star / self.tau_bau

    def to_json(self) -> str:
        return json.dumps({
            "tau_bau": self.tau_bau, "tau_star": self.tau_star, "reduction": self.reduction,
            "reduction_pct": 100.0 * self.reduction, "bau_revenue": self.bau_revenue,
            "converged": self.converged, "note": self.note,
            "trials": [{"tau": t, "revenue": r} for t, r in self.trace],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationResult":
        d = json.loads(text)
        return cls(d["tau_star"], d["tau_bau"], d["bau_revenue"],
                   [(t["tau"], t["revenue"]) for t in d["trials"]], d["converged"], d["note"])


def bisect_revenue_neutral(revenue_at: Callable[[float], float], bau_revenue: float, tau_bau: float,
                           tol_rel: float = 1e-3, max_iter: int = 20) -> CalibrationResult:
    """Find the uniform tax rate whose revenue matches ``bau_revenue``.

    ``revenue_at(tau)`` returns total revenue with behaviour re-optimised at
    ``tau``.  Revenue has to be non-decreasing in the trial rate; a violation
    beyond ``tol_rel`` aborts with :class:`CalibrationError`.
    """
    if tol_rel <= 0:
        raise PolicyError("tol_rel must be positive")
    trace: list[tuple[float, float]] = []

    def trial(tau):
        rev = float(revenue_at(tau))
        trace.append((tau, rev))
        ordered = sorted(trace)
        slack = tol_rel * max(abs(bau_revenue), 1e-12)
        for (t0, r0), (t1, r1) in zip(ordered, ordered[1:]):
            if r1 < r0 - slack:
                raise CalibrationError(
                    f"revenue decreased from {r0:.6g} at tau={t0:.6g} to {r1:.6g} at tau={t1:.6g}")
        logger.info("calibration trial tau=%.6f revenue=%.6f target=%.6f", tau, rev, bau_revenue)
        return rev

    target_band = tol_rel * abs(bau_revenue)
    top = trial(tau_bau)
    if abs(top - bau_revenue) <= target_band or top < bau_revenue:
        note = "" if top >= bau_revenue - target_band else "no reduction possible"
        return CalibrationResult(tau_bau, tau_bau, bau_revenue, trace, True, note)

    lo, hi = 0.0, tau_bau
    tau = hi
    for _ in range(max_iter):
        tau = 0.5 * (lo + hi)
        rev = trial(tau)
        if abs(rev - bau_revenue) <= target_band:
            return CalibrationResult(tau, tau_bau, bau_revenue, trace, True)
        if rev > bau_revenue:
            hi = tau
        else:
            lo = tau
    return CalibrationResult(tau, tau_bau, bau_revenue, trace, False,
                             f"bisection stopped after {max_iter} iterations")


def calibrate_revenue_neutral(population, provider, base: Optional[TaxPolicy] = None,
                              uniform: Optional[TaxPolicy] = None, tol_rel: float = 1e-3,
                              max_iter: int = 20, workers: int = 1, opts=None,
                              evaluate: Optional[Callable[[TaxPolicy], float]] = None) -> CalibrationResult:
    """Uniform rate that keeps total revenue at the ``base`` level.

    Every trial re-optimises all households.  ``evaluate(policy)`` may be
    supplied to replace the fleet evaluation, e.g. with frozen behaviour.
    """
    base = base or preset("BAU")
    uniform = uniform or preset("NTAX")
    if base.price_mode != uniform.price_mode:
        raise PolicyError("calibration compares scenarios under the same price series")
    if evaluate is None:
        if not population:
            raise PolicyError("calibration needs a nonempty population")
        from .batch import SolveOptions, fleet_revenue

        run_opts = opts or SolveOptions()

        def evaluate(pol):
            return fleet_revenue(population, provider, pol, workers, run_opts)

    bau_revenue = float(evaluate(base))
    tau_bau = base.tax_eur_per_kwh
    return bisect_revenue_neutral(lambda tau: evaluate(uniform.with_tax(tau)), bau_revenue, tau_bau,
                                  tol_rel, max_iter)

"""Acceptance suite.  Each test records one PASS/FAIL line, printed at the end of the run.

Desk-scale configuration: one household per category (36), population seed
2017, default timeseries config (8760 h, seed 2017), default rolling horizon.
"""

from __future__ import annotations

import dataclasses
import math
import os
import signal
import subprocess
import sys
import time

import numpy as np
import pytest
import scipy.sparse as sp

from oracles import grid_search_min, random_small_lp, vertex_enumeration
from taxlab.batch import ResultStore, run_fleet
from taxlab.household import FLOWS, build_lp, default_initial_states, solve_household, verify_balances
from taxlab.lpcore import LinearProgram, constraint_violation, solve
from taxlab.policy import calibrate_revenue_neutral, preset, tax_revenue
from taxlab.population import (AreaBand, CategoryKey, Household, IncomeBand, Occupancy, PopulationSpec,
                               TechnologyPark, size_technologies, synthesize_population)
from taxlab.report import category_delta_matrix, flow_delta_matrix, relative_difference_curve
from taxlab.timeseries import ExogenousSeries, SeriesConfig, SeriesProvider

from conftest import record_criterion

DESK_SEED = 2017
DESK_SPEC = PopulationSpec(households_per_category=1)
DESK_SERIES = SeriesConfig()
WEEK = SeriesConfig().with_horizon(168)

TOL_ORACLE = 1e-6
TOL_BALANCE = 1e-6
TOL_IDENTITY = 1e-9
TOL_COLLAPSE = 1e-9
TOL_TOY = 1e-9
TOL_CALIB_CLOSED_FORM = 1e-3
ROLLING_MAX_EXCESS = 0.02
BT_MP_RATIO = 3.0
SPEEDUP_MIN = 2.0


def criterion(n, ok, detail):
    record_criterion(n, bool(ok), detail)
    assert ok, detail


@pytest.fixture(scope="session")
def desk_population():
    return synthesize_population(DESK_SPEC, DESK_SEED)


@pytest.fixture(scope="session")
def desk_store(desk_population, tmp_path_factory):
    path = tmp_path_factory.mktemp("desk")
    scen = [preset(n) for n in ("BAU", "NTAX", "BAUHi", "NTAXHi")]
    rep = run_fleet(desk_population, SeriesProvider(DESK_SERIES), scen, 1, path)
    assert rep.failed == 0
    return rep.store


# 1 ------------------------------------------------------------------------------------------

def test_c01_lp_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    bad = []
    for i in range(200):
        c, A, sense, rhs, lb, ub = random_small_lp(rng)
        status, value = vertex_enumeration(c, A, sense, rhs, lb, ub)
        lp = LinearProgram(c, sp.csr_matrix(A), sense, rhs, lb, ub)
        sol = solve(lp, backend="simplex")
        if sol.status.value != status:
            bad.append((i, status, sol.status.value))
        elif status == "optimal" and abs(sol.objective_value - value) > TOL_ORACLE:
            bad.append((i, value, sol.objective_value))
    dt = time.perf_counter() - t0
    criterion(1, not bad and dt < 10.0, f"200 LPs, {len(bad)} mismatches, {dt:.2f}s (limit 10s)")


# 2 ------------------------------------------------------------------------------------------

def test_c02_balance_audit():
    pop = synthesize_population(DESK_SPEC, DESK_SEED)
    prov = SeriesProvider(WEEK)
    t0 = time.perf_counter()
    worst, failed = 0.0, []
    for hh in pop:
        s = prov(hh)
        for name in ("BAU", "NTAX"):
            r = solve_household(hh, s, preset(name))
            rep = verify_balances(r.solution, s, hh, tol=TOL_BALANCE)
            worst = max(worst, rep.max_residual)
            if not rep.ok:
                failed.append((hh.id, name, rep.failed))
    dt = time.perf_counter() - t0
    criterion(2, not failed and dt < 120.0,
              f"72 solves, worst residual {worst:.2e} kWh, {len(failed)} failing, {dt:.1f}s (limit 120s)")


# 3 ------------------------------------------------------------------------------------------

CAT = CategoryKey(Occupancy.P2, AreaBand.A1, IncomeBand.E2)


def _toy_series(T, rng, with_ev):
    hours = np.arange(T)
    avail = np.ones(T, dtype=np.int8)
    trip = np.zeros(T)
    dep = np.zeros(0, dtype=np.int64)
    if with_ev:
        avail[8:17] = 0
        trip[8:17] = 12.0 / 9
        dep = np.array([7], dtype=np.int64)
    return ExogenousSeries(price=0.02 + 0.03 * rng.random(T), solar_norm=np.clip(np.sin((hours - 6) / 12 * np.pi), 0, 1) * 0.7,
                           temp_c=np.full(T, 2.0), cop=np.full(T, 2.4), heat_kwh=1.0 + rng.random(T),
                           base_kwh=0.3 + rng.random(T) * 0.5, ev_available=avail, ev_trip_kwh=trip,
                           ev_forced_kwh=np.zeros(T), departure_hours=dep)


def _toy_households():
    full = size_technologies(100.0)
    pv_only = dataclasses.replace(TechnologyPark.empty(), pv_kwp=4.0)
    pv_bt = dataclasses.replace(pv_only, battery_kwh=3.0, battery_charge_kw=1.5)
    return [("pv", Household("t-pv", CAT, 100.0, "mid", pv_only, 1), False),
            ("pv+bt", Household("t-bt", CAT, 100.0, "mid", pv_bt, 2), False),
            ("full", Household("t-full", CAT, 100.0, "mid", full, 3), True)]


def test_c03_objective_identity():
    rng = np.random.default_rng(303)
    tau = preset("BAU").tax_eur_per_kwh
    worst, points = 0.0, 0
    for _, hh, ev in _toy_households():
        s = _toy_series(24, rng, ev)
        bau = build_lp(hh, s, preset("BAU"))
        ntax = build_lp(hh, s, preset("NTAX"))
        verts = [solve(dataclasses.replace(bau.lp, c=rng.normal(size=bau.lp.num_vars)), backend="highs").primal
                 for _ in range(10)]
        X = rng.dirichlet(np.ones(len(verts)), size=100) @ np.array(verts)
        for x in X:
            assert constraint_violation(bau.lp, x) <= 1e-6
            g = bau.extract(x)
            lhs = ntax.lp.c @ x - bau.lp.c @ x
            rhs = tau * float(np.sum(g["pv_total"] - g["pv_to_mp"] - g["bt_to_mp"]))
            worst = max(worst, abs(lhs - rhs))
            points += 1
    criterion(3, worst <= TOL_IDENTITY, f"{points} feasible points on 3 toy households, max gap {worst:.2e}")


# 4 ------------------------------------------------------------------------------------------

def test_c04_tau_zero_collapse():
    pop = synthesize_population(PopulationSpec(households_per_category=1), 44)
    pop = pop[::3][:10]
    prov = SeriesProvider(WEEK)
    worst = 0.0
    for hh in pop:
        s = prov(hh)
        a = solve_household(hh, s, preset("BAU").with_tax(0.0)).objective_value
        b = solve_household(hh, s, preset("NTAX").with_tax(0.0)).objective_value
        worst = max(worst, abs(a - b))
    criterion(4, len(pop) == 10 and worst <= TOL_COLLAPSE, f"10 households at 168 h, max |BAU-NTAX| {worst:.2e}")


# 5 ------------------------------------------------------------------------------------------

def _flat_series(T, base, solar):
    z = np.zeros(T)
    return ExogenousSeries(price=np.full(T, 0.03), solar_norm=np.full(T, solar), temp_c=z.copy(),
                           cop=np.full(T, 3.0), heat_kwh=z.copy(), base_kwh=np.full(T, base),
                           ev_available=np.ones(T, dtype=np.int8), ev_trip_kwh=z.copy(), ev_forced_kwh=z.copy(),
                           departure_hours=np.zeros(0, dtype=np.int64))


def test_c05_toy_closed_forms():
    p, g, tau = 0.03, 0.036, 0.12
    empty = Household("toy0", CAT, 100.0, "mid", TechnologyPark.empty(), 1)
    pv = Household("toy1", CAT, 100.0, "mid", dataclasses.replace(TechnologyPark.empty(), pv_kwp=2.0), 1)
    got = {
        "import-only": solve(build_lp(empty, _flat_series(3, 1.0, 0.0), preset("BAU")).lp).objective_value,
        "pv-bau": solve(build_lp(pv, _flat_series(1, 1.0, 1.0), preset("BAU")).lp).objective_value,
        "pv-ntax": solve(build_lp(pv, _flat_series(1, 1.0, 1.0), preset("NTAX")).lp).objective_value,
    }
    want = {"import-only": 0.558, "pv-bau": -p, "pv-ntax": -p + tau}
    gaps = {k: abs(got[k] - want[k]) for k in want}
    grid_ok = True
    for name in ("BAU", "NTAX"):
        beta = preset(name).beta_n

        def cost(x):
            pv_co, pv_mp = x
            if pv_co + pv_mp > 2.0 + 1e-12:
                return math.inf
            return (p + g + tau) * (1 - pv_co) + beta * tau * (pv_co + pv_mp) - (p + beta * tau) * pv_mp

        best, _ = grid_search_min(cost, [(0, 1), (0, 2)], 0.1)
        lp_val = got["pv-bau" if name == "BAU" else "pv-ntax"]
        step_bound = 0.1 * max(p + g + tau, p + tau) * 2
        grid_ok &= lp_val <= best + 1e-12 and best - lp_val <= step_bound
    ok = max(gaps.values()) <= TOL_TOY and grid_ok
    criterion(5, ok, f"closed-form gaps {', '.join(f'{k}={v:.1e}' for k, v in gaps.items())}; grid search ok={grid_ok}")


# 6 ------------------------------------------------------------------------------------------

def test_c06_revenue_neutral_calibration(desk_population):
    t0 = time.perf_counter()
    zero_pv = [dataclasses.replace(h, park=dataclasses.replace(h.park, pv_kwp=0.0)) for h in desk_population[:6]]
    a = calibrate_revenue_neutral(zero_pv, SeriesProvider(DESK_SERIES))
    ok_a = a.reduction == 0.0

    bau_base = 2500.0

    def frozen(pol):
        return pol.tax_eur_per_kwh * bau_base * (1.6 if pol.beta_n else 1.0)

    b = calibrate_revenue_neutral(None, None, evaluate=frozen)
    ok_b = abs(b.tau_star - 0.12 / 1.6) <= TOL_CALIB_CLOSED_FORM * 0.12 / 1.6

    t_c = time.perf_counter()
    c = calibrate_revenue_neutral(desk_population, SeriesProvider(DESK_SERIES))
    dt_c = time.perf_counter() - t_c
    ok_c = c.converged and 0.25 <= c.reduction <= 0.50
    dt = time.perf_counter() - t0
    ok = ok_a and ok_b and ok_c and dt < 20 * 60
    criterion(6, ok, f"(a) zero-PV reduction {a.reduction:.3%}; (b) tau*={b.tau_star:.6f} vs {0.12 / 1.6:.6f}; "
                     f"(c) desk reduction {c.reduction:.3%} after {len(c.trace)} trials in {dt_c:.0f}s; "
                     f"total {dt:.0f}s (limit 1200s)")


# 7 ------------------------------------------------------------------------------------------

def test_c07_flow_signs(desk_store):
    d = flow_delta_matrix(desk_store, "BAU", "NTAX")
    h = flow_delta_matrix(desk_store, "BAUHi", "NTAXHi")
    signs = {
        "imports Sum > 0": d.loc["MP", "Sum"] > 0,
        "PV->BT < 0": d.loc["PV", "BT"] < 0,
        "BT->CO < 0": d.loc["BT", "CO"] < 0,
        "PV->MP > 0": d.loc["PV", "MP"] > 0,
    }
    base_bt_mp = abs(d.loc["BT", "MP"])
    hi_bt_mp = abs(h.loc["BT", "MP"])
    ratio_ok = hi_bt_mp >= BT_MP_RATIO * base_bt_mp
    detail = (f"imports Sum {d.loc['MP', 'Sum']:+.2f}, PV->BT {d.loc['PV', 'BT']:+.1f}, "
              f"BT->CO {d.loc['BT', 'CO']:+.1f}, PV->MP {d.loc['PV', 'MP']:+.1f} kWh/yr; "
              f"|BT->MP| hi {hi_bt_mp:.1f} vs base {base_bt_mp:.1f} (need >= {BT_MP_RATIO}x); "
              f"signs agreeing {sum(signs.values())}/4")
    criterion(7, all(signs.values()) and ratio_ok, detail)


def test_desk_scale_context(desk_store):
    """Desk-scale checks listed as examples next to the operations (not numbered criteria)."""
    bau = desk_store.scenario("BAU")
    share = float(np.mean([r.self_consumption for r in bau.values()]))
    rel = relative_difference_curve(desk_store, "BAU", "NTAX")
    cells = category_delta_matrix(desk_store, "BAU", "NTAX").mean.to_numpy()
    assert 0.25 <= share <= 0.50
    assert (rel["delta_total"] >= -1e-9).all()
    assert (cells > 0).all()
    rev = tax_revenue(bau[h].breakdown for h in sorted(bau))
    assert rev > 0


# 8 ------------------------------------------------------------------------------------------

def _cli(*args):
    return [sys.executable, "-m", "taxlab.cli", *map(str, args)]


def test_c08_determinism_and_resume(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("seed: 8\npopulation:\n  households_per_category: 1\n"
                   "  only: [P1xA1xE1, P1xA2xE2, P2xA3xE3, P2xA1xE2, P3xA2xE1, P3xA3xE2, P5plusxA1xE3,"
                   " P5plusxA2xE1, P5plusxA3xE2, P2xA2xE1]\n"
                   "timeseries:\n  horizon: 168\n")
    common = ("--config", cfg, "run", "--scenarios", "BAU,NTAX", "--rows-per-shard", 1)
    env = dict(os.environ, PYTHONUNBUFFERED="1")
    r1 = subprocess.run(_cli(*common, "--workers", 1, "--store", tmp_path / "w1"), env=env, capture_output=True)
    r4 = subprocess.run(_cli(*common, "--workers", 4, "--store", tmp_path / "w4"), env=env, capture_output=True)
    one = ResultStore(tmp_path / "w1").canonical_text()
    four = ResultStore(tmp_path / "w4").canonical_text()

    killed_at = 0
    store = tmp_path / "killed"
    proc = subprocess.Popen(_cli(*common, "--workers", 1, "--store", store), env=env,
                            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    shards = store / "shards"
    deadline = time.time() + 120
    while time.time() < deadline and proc.poll() is None:
        n = len(list(shards.glob("shard-*.csv"))) if shards.exists() else 0
        if n >= 10:
            proc.send_signal(signal.SIGKILL)
            killed_at = n
            break
        time.sleep(0.02)
    proc.wait()
    r2 = subprocess.run(_cli(*common, "--workers", 2, "--store", store), env=env, capture_output=True)
    resumed = ResultStore(store).canonical_text()
    ok = (r1.returncode == 0 and r4.returncode == 0 and r2.returncode == 0 and one == four and resumed == one
          and 10 <= killed_at < 20 and len(ResultStore(store).records) == 20)
    criterion(8, ok, f"workers 1 vs 4 identical={one == four}; killed after {killed_at}/20 results, "
                     f"resumed store identical={resumed == one}")


# 9 ------------------------------------------------------------------------------------------

def test_c09_rolling_horizon():
    pop = synthesize_population(PopulationSpec(households_per_category=1), 99)
    ref = [pop[i] for i in range(0, 36, 36 // 10)][:10]
    cfg = SeriesConfig().with_horizon(1344)
    prov = SeriesProvider(cfg)
    identical = True
    worst_excess = -math.inf
    audit_ok = True
    for hh in ref:
        s = prov(hh)
        pol = preset("NTAX")
        init = default_initial_states(hh, s)
        whole = build_lp(hh, s, pol, init_states=init,
                         terminal_rule={"soc_bt": init["soc_bt"], "soc_hst_th": init["soc_hst_th"]})
        single = solve(whole.lp, backend="highs")
        flows = whole.extract(single.primal)
        one_block = solve_household(hh, s, pol, block=s.horizon_hours, overlap=0)
        identical &= one_block.objective_value == single.objective_value and all(
            np.array_equal(getattr(one_block.solution, f), flows[f]) for f in FLOWS)
        rolled = solve_household(hh, s, pol, block=336, overlap=48)
        rep = verify_balances(rolled.solution, s, hh, tol=TOL_BALANCE)
        audit_ok &= rep.ok
        excess = (rolled.objective_value - single.objective_value) / abs(single.objective_value)
        assert rolled.objective_value >= single.objective_value - 1e-6
        worst_excess = max(worst_excess, excess)
    ok = identical and audit_ok and worst_excess < ROLLING_MAX_EXCESS
    criterion(9, ok, f"10 households x 1344 h: block=horizon bit-identical={identical}; 336/48 audit ok={audit_ok}; "
                     f"worst objective excess {worst_excess:.4%} (limit {ROLLING_MAX_EXCESS:.0%})")


# 10 -----------------------------------------------------------------------------------------

@pytest.mark.perf
def test_c10_performance_budget(tmp_path):
    cores = os.cpu_count()
    small = synthesize_population(PopulationSpec(households_per_category=1), DESK_SEED)[:8]
    prov = SeriesProvider(DESK_SERIES)
    t1 = run_fleet(small, prov, [preset("BAU")], 1, tmp_path / "s1").seconds
    t4 = run_fleet(small, prov, [preset("BAU")], 4, tmp_path / "s4").seconds
    speedup = t1 / t4

    pop = synthesize_population(PopulationSpec(households_per_category=10), DESK_SEED)
    scen = [preset(n) for n in ("BAU", "NTAX", "NTAXHi", "BAUHi")]
    budget = 30 * 60
    rep = run_fleet(pop, prov, scen, 4, tmp_path / "fleet", deadline_s=budget)
    done = rep.solved + rep.skipped
    ok = rep.complete and rep.seconds < budget and speedup >= SPEEDUP_MIN
    criterion(10, ok, f"{done}/{len(pop) * len(scen)} items in {rep.seconds:.0f}s with 4 workers on {cores} CPU(s) "
                      f"(budget {budget}s); speedup 1->4 workers {speedup:.2f}x (need >= {SPEEDUP_MIN}x)")

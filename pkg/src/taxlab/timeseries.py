"""Synthetic hourly exogenous series and their CSV ingestion.

Every generator is a pure function of its arguments and seed.  Generated and
ingested series go through the same :func:`validate_series` check.

Calibration constants live in :class:`SeriesConfig`; they stand in for
proprietary market, weather, smart-meter and travel-survey data and are
anchored to published aggregates (about 1059 kWh/kWp PV yield, about
14000 kWh/yr heat, 1800-3200 kWh/yr EV driving).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .population import AreaBand, CategoryKey, Household, Occupancy

HOURS_PER_YEAR = 8760
PRICE_MODES = ("base2017", "hi2022")


class SeriesError(ValueError):
    pass


@dataclass(frozen=True)
class SeriesConfig:
    horizon: int = HOURS_PER_YEAR
    seed: int = 2017

    price_mean: float = 0.030
    price_hi_mean_factor: float = 4.0
    price_hi_std_factor: float = 3.0
    price_seasonal_amp: float = 0.12
    price_daily_amp: float = 0.28
    price_noise_sigma: float = 0.06
    price_noise_phi: float = 0.9
    price_day_noise_sigma: float = 0.12
    price_morning_peak: float = 1.0
    price_evening_peak: float = 1.3
    price_night_trough: float = 0.6
    price_midday_trough: float = 0.3

    solar_annual_kwh_per_kwp: float = 1059.0
    latitude_deg: float = 56.0

    temp_mean: float = 8.5
    temp_amplitude: float = 9.0
    temp_daily_amplitude: float = 3.0
    temp_noise_sigma: float = 2.0

    cop_at_ref: float = 2.8
    cop_slope: float = 0.08
    cop_ref_temp: float = 7.0
    cop_min: float = 1.5
    cop_max: float = 4.5

    heating_base_temp: float = 17.0
    heat_intensity_old: float = 130.0
    heat_intensity_mid: float = 95.0
    heat_intensity_new: float = 65.0
    dhw_kwh_per_hour: float = 0.1
    heat_noise_sigma: float = 0.1

    base_annual_p1: float = 1600.0
    base_annual_p2: float = 2500.0
    base_annual_p3: float = 3400.0
    base_annual_p5plus: float = 4300.0
    base_area_mult_a1: float = 0.9
    base_area_mult_a2: float = 1.0
    base_area_mult_a3: float = 1.15
    base_noise_sigma: float = 0.35
    base_level_sigma: float = 0.04

    ev_annual_min_kwh: float = 1800.0
    ev_annual_max_kwh: float = 3200.0
    ev_floor_fraction: float = 0.2
    ev_charge_efficiency: float = 0.9

    def __post_init__(self):
        if self.horizon < 24:
            raise SeriesError("horizon must be at least 24 hours")

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_mapping(cls, data: dict) -> "SeriesConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SeriesError(f"unknown timeseries keys: {sorted(unknown)}")
        return cls(**data)

    def with_horizon(self, horizon: int) -> "SeriesConfig":
        return dataclasses.replace(self, horizon=horizon)


@dataclass(frozen=True, eq=False)
class ExogenousSeries:
    price: np.ndarray
    solar_norm: np.ndarray
    temp_c: np.ndarray
    cop: np.ndarray
    heat_kwh: np.ndarray
    base_kwh: np.ndarray
    ev_available: np.ndarray
    ev_trip_kwh: np.ndarray
    ev_forced_kwh: np.ndarray
    departure_hours: np.ndarray

    @property
    def horizon_hours(self) -> int:
        return int(self.price.shape[0])

    def window(self, t0: int, t1: int) -> "ExogenousSeries":
        """Hours ``[t0, t1)``; departures are kept if their following hour exists globally."""
        dep = self.departure_hours
        dep = dep[(dep >= t0) & (dep < t1)] - t0
        cut = {f.name: getattr(self, f.name)[t0:t1] for f in dataclasses.fields(self)
               if f.name != "departure_hours"}
        return ExogenousSeries(departure_hours=dep, **cut)

    def with_price(self, price: np.ndarray) -> "ExogenousSeries":
        return dataclasses.replace(self, price=np.asarray(price, dtype=float))

    def departure_mask(self) -> np.ndarray:
        mask = np.zeros(self.horizon_hours, dtype=bool)
        mask[self.departure_hours] = True
        return mask


def validate_series(s: ExogenousSeries) -> ExogenousSeries:
    """Check every series invariant; raise :class:`SeriesError` naming row and column."""
    H = s.horizon_hours
    columns = {"price": s.price, "solar_norm": s.solar_norm, "temp_c": s.temp_c, "cop": s.cop,
               "heat_kwh": s.heat_kwh, "base_kwh": s.base_kwh, "ev_avail": s.ev_available,
               "ev_trip_kwh": s.ev_trip_kwh, "ev_forced_kwh": s.ev_forced_kwh}
    for name, arr in columns.items():
        if arr.shape != (H,):
            raise SeriesError(f"column {name}: length {arr.shape[0] if arr.ndim else 0} != {H}")
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise SeriesError(f"column {name}: non-finite value at row {int(bad[0])}")

    def check(name, ok):
        bad = np.flatnonzero(~ok)
        if bad.size:
            raise SeriesError(f"column {name}: invalid value {columns[name][bad[0]]!r} at row {int(bad[0])}")

    check("solar_norm", (s.solar_norm >= 0) & (s.solar_norm <= 1))
    check("cop", s.cop >= 1)
    check("heat_kwh", s.heat_kwh >= 0)
    check("base_kwh", s.base_kwh >= 0)
    check("ev_avail", (s.ev_available == 0) | (s.ev_available == 1))
    check("ev_trip_kwh", (s.ev_trip_kwh >= 0) & ~((s.ev_trip_kwh > 0) & (s.ev_available == 1)))
    check("ev_forced_kwh", (s.ev_forced_kwh >= 0) & ~((s.ev_forced_kwh > 0) & (s.ev_available == 0)))
    dep = np.asarray(s.departure_hours)
    if dep.size:
        if dep.min() < 0 or dep.max() >= H:
            raise SeriesError("column departure: hour index outside horizon")
        for h in dep:
            nxt_away = h + 1 < H and s.ev_available[h + 1] == 0
            if s.ev_available[h] != 1 or (h + 1 < H and not nxt_away):
                raise SeriesError(f"column departure: row {int(h)} is not the last hour at home before a trip")
    return s


# --- national series --------------------------------------------------------------------

def _years(horizon: int) -> int:
    return max(1, math.ceil(horizon / HOURS_PER_YEAR))


def _hour_index(n_hours: int):
    t = np.arange(n_hours)
    return t, (t // 24) % 365, t % 24


def _ar1(rng: np.random.Generator, n: int, phi: float, sigma: float) -> np.ndarray:
    eps = rng.normal(0.0, sigma * math.sqrt(1 - phi * phi), n)
    start = rng.normal(0.0, sigma)
    out, _ = lfilter([1.0], [1.0, -phi], eps, zi=[phi * start])
    return out


def _base_price_year(seed: int, n: int, cfg: SeriesConfig) -> np.ndarray:
    rng = np.random.default_rng([seed, 11])
    t, day, hour = _hour_index(n)
    weekday = (t // 24) % 7
    diurnal = (cfg.price_morning_peak * np.exp(-((hour - 8.0) / 2.0) ** 2)
               + cfg.price_evening_peak * np.exp(-((hour - 18.5) / 2.5) ** 2)
               - cfg.price_night_trough * np.exp(-((hour - 3.5) / 2.5) ** 2)
               - cfg.price_midday_trough * np.exp(-((hour - 13.0) / 2.0) ** 2))
    z = (cfg.price_seasonal_amp * np.cos(2 * np.pi * (day - 15) / 365)
         + cfg.price_daily_amp * diurnal
         - 0.08 * (weekday >= 5)
         + _ar1(rng, n, cfg.price_noise_phi, cfg.price_noise_sigma)
         + _ar1(rng, n // 24 + 1, 0.8, cfg.price_day_noise_sigma).repeat(24)[:n])
    p = np.exp(z)
    return p * (cfg.price_mean / p.mean())


def gen_prices(horizon: int, mode: str = "base2017", seed: int = 2017,
               cfg: SeriesConfig = SeriesConfig()) -> np.ndarray:
    """Hourly day-ahead price in EUR/kWh.

    ``hi2022`` is an affine image of ``base2017`` with the mean scaled by
    ``price_hi_mean_factor`` and the standard deviation by
    ``price_hi_std_factor``, so both modes share one normalized shape.
    """
    if horizon < 24:
        raise SeriesError("horizon must be at least 24 hours")
    if mode not in PRICE_MODES:
        raise SeriesError(f"unknown price mode {mode!r}")
    n = _years(horizon) * HOURS_PER_YEAR
    p = _base_price_year(seed, n, cfg)
    if mode == "hi2022":
        a = cfg.price_hi_std_factor
        p = a * p + (cfg.price_hi_mean_factor - a) * p.mean()
    return p[:horizon]


def gen_solar(horizon: int, seed: int = 2017, cfg: SeriesConfig = SeriesConfig()) -> np.ndarray:
    """Normalized PV output per kWp, zero at night, annual sum at the configured yield."""
    if horizon < 24:
        raise SeriesError("horizon must be at least 24 hours")
    n = _years(horizon) * HOURS_PER_YEAR
    rng = np.random.default_rng([seed, 23])
    t, day, hour = _hour_index(n)
    decl = np.radians(23.45) * np.sin(2 * np.pi * (284 + day + 1) / 365)
    lat = np.radians(cfg.latitude_deg)
    omega = np.radians(15.0 * (hour + 0.5 - 12.0))
    sin_elev = np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(omega)
    clear = np.clip(sin_elev, 0.0, None) ** 1.15
    # cloudier winters: daily clearness drawn from a seasonal beta distribution
    n_days = n // 24
    d = np.arange(n_days) % 365
    mean_k = 0.55 + 0.17 * np.cos(2 * np.pi * (d - 172) / 365)
    conc = 4.0
    k_day = rng.beta(mean_k * conc, (1 - mean_k) * conc)
    k = np.repeat(0.15 + 0.85 * k_day, 24) * rng.uniform(0.85, 1.0, n)
    raw = clear * k
    target = cfg.solar_annual_kwh_per_kwp * (n / HOURS_PER_YEAR)
    out = raw * (target / raw.sum())
    for _ in range(50):
        over = out > 1.0
        if not over.any():
            break
        out[over] = 1.0
        free = out < 1.0
        short = target - out.sum()
        out[free] *= 1 + short / out[free].sum()
    return np.clip(out, 0.0, 1.0)[:horizon]


def gen_temperature(horizon: int, seed: int = 2017, cfg: SeriesConfig = SeriesConfig(),
                    noise: bool = True) -> np.ndarray:
    n = _years(horizon) * HOURS_PER_YEAR
    t, day, hour = _hour_index(n)
    temp = (cfg.temp_mean - cfg.temp_amplitude * np.cos(2 * np.pi * (day - 20) / 365)
            + cfg.temp_daily_amplitude * np.cos(2 * np.pi * (hour - 15) / 24))
    if noise:
        rng = np.random.default_rng([seed, 37])
        daily = _ar1(rng, n // 24 + 1, 0.75, cfg.temp_noise_sigma).repeat(24)[:n]
        temp = temp + daily
    return temp[:horizon]


def cop_from_temperature(temp_c, cfg: SeriesConfig = SeriesConfig()) -> np.ndarray:
    temp = np.asarray(temp_c, dtype=float)
    cop = cfg.cop_at_ref + cfg.cop_slope * (temp - cfg.cop_ref_temp)
    return np.clip(cop, cfg.cop_min, cfg.cop_max)


# --- household series -------------------------------------------------------------------

@lru_cache(maxsize=8)
def _reference_degree_hours(cfg: SeriesConfig) -> float:
    ref = gen_temperature(HOURS_PER_YEAR, cfg=cfg, noise=False)
    return float(np.clip(cfg.heating_base_temp - ref, 0.0, None).sum())


def gen_heat_demand(area_m2: float, age_band: str, temp_c, seed: int,
                    cfg: SeriesConfig = SeriesConfig()) -> np.ndarray:
    """Space heating proportional to degree-hours below the base temperature plus hot water."""
    if not area_m2 > 0:
        raise SeriesError("area must be positive")
    intensity = {"old": cfg.heat_intensity_old, "mid": cfg.heat_intensity_mid,
                 "new": cfg.heat_intensity_new}[age_band]
    temp = np.asarray(temp_c, dtype=float)
    n = temp.shape[0]
    rng = np.random.default_rng([seed, 41])
    daily = rng.lognormal(-0.5 * cfg.heat_noise_sigma ** 2, cfg.heat_noise_sigma, n // 24 + 1)
    per_degree_hour = intensity * area_m2 / _reference_degree_hours(cfg)
    space = per_degree_hour * np.clip(cfg.heating_base_temp - temp, 0.0, None) * daily.repeat(24)[:n]
    return space + cfg.dhw_kwh_per_hour


def _base_annual(cat: CategoryKey, cfg: SeriesConfig) -> float:
    occ = {Occupancy.P1: cfg.base_annual_p1, Occupancy.P2: cfg.base_annual_p2,
           Occupancy.P3: cfg.base_annual_p3, Occupancy.P5PLUS: cfg.base_annual_p5plus}
    area = {AreaBand.A1: cfg.base_area_mult_a1, AreaBand.A2: cfg.base_area_mult_a2,
            AreaBand.A3: cfg.base_area_mult_a3}
    return occ[cat.occupancy] * area[cat.area_band]


def gen_base_load(category: CategoryKey, seed: int, horizon: int = HOURS_PER_YEAR,
                  cfg: SeriesConfig = SeriesConfig()) -> np.ndarray:
    """Double-peaked household appliance load in kWh per hour."""
    n = _years(horizon) * HOURS_PER_YEAR
    rng = np.random.default_rng([seed, 53])
    t, day, hour = _hour_index(n)
    weekend = ((t // 24) % 7) >= 5
    morning = np.where(weekend, 9.5, 7.5)
    shape = (0.55 + 0.7 * np.exp(-((hour - morning) / 1.5) ** 2)
             + 1.4 * np.exp(-((hour - 19.0) / 2.2) ** 2)
             + 0.25 * weekend * np.exp(-((hour - 13.0) / 3.0) ** 2))
    shape = shape * (1 + 0.15 * np.cos(2 * np.pi * (day - 15) / 365))
    noise = rng.lognormal(-0.5 * cfg.base_noise_sigma ** 2, cfg.base_noise_sigma, n)
    level = rng.lognormal(0.0, cfg.base_level_sigma)
    raw = shape * noise
    total = _base_annual(category, cfg) * level * (n / HOURS_PER_YEAR)
    return (raw * (total / raw.sum()))[:horizon]


@dataclass(frozen=True, eq=False)
class EvSchedule:
    available: np.ndarray
    trip_kwh: np.ndarray
    forced_kwh: np.ndarray
    departure_hours: np.ndarray


def _departures(avail: np.ndarray) -> np.ndarray:
    return np.flatnonzero((avail[:-1] == 1) & (avail[1:] == 0)).astype(np.int64)


def gen_ev_schedule(seed: int, horizon: int = HOURS_PER_YEAR, capacity_kwh: float = 40.0,
                    charger_kw: float = 11.0, cfg: SeriesConfig = SeriesConfig()) -> EvSchedule:
    """Commute and leisure trips for one vehicle.

    The vehicle leaves full (the dispatch model enforces this), so its arrival
    state is ``capacity - trip energy``; arrivals below the emergency floor get
    a forced charge in their first hour home.  Trips whose preceding home stay
    is too short to refill the battery are dropped.
    """
    if horizon < 168:
        raise SeriesError("EV schedule needs at least one week")
    years = _years(horizon)
    n = years * HOURS_PER_YEAR
    rng = np.random.default_rng([seed, 67])
    trips = []  # (start, end_exclusive, weight)
    for d in range(n // 24):
        base = d * 24
        weekday = d % 7 < 5
        if weekday and rng.random() < 0.88:
            leave = base + 8 + int(rng.integers(-1, 2))
            back = base + 17 + int(rng.integers(-1, 2))
            trips.append((leave, back, 1.0))
            if rng.random() < 0.12:
                trips.append((base + 20, base + 22, rng.uniform(0.2, 0.6)))
        elif not weekday and rng.random() < 0.55:
            start = base + int(rng.integers(9, 15))
            dur = int(rng.integers(2, 7))
            weight = 5.5 if rng.random() < 0.04 else rng.uniform(0.4, 1.6)
            trips.append((start, min(start + dur, base + 23), weight))

    eta = cfg.ev_charge_efficiency
    annual = rng.uniform(cfg.ev_annual_min_kwh, cfg.ev_annual_max_kwh)
    target = annual * years
    cap = 0.95 * capacity_kwh

    def scaled(ws):
        e = ws * (target / ws.sum())
        for _ in range(8):
            e = np.minimum(e, cap)
            e *= target / e.sum()
        return np.minimum(e, cap)

    # drop trips that start before the previous trip's energy can be recharged
    kept = [tr for tr in trips if 1 <= tr[0] and tr[1] < n - 1]
    for _ in range(10):
        energy = scaled(np.array([w for _, _, w in kept]))
        survivors = []
        last_back, last_energy = 0, 0.0
        for (start, end, w), e in zip(kept, energy):
            if start < last_back + 1 or (start - last_back) * charger_kw < last_energy / eta:
                continue
            survivors.append((start, end, w))
            last_back, last_energy = end, e
        if len(survivors) == len(kept):
            break
        kept = survivors
    kept = [(start, end, e) for (start, end, _), e in zip(kept, energy)]

    avail = np.ones(n, dtype=np.int8)
    trip = np.zeros(n)
    forced = np.zeros(n)
    floor = cfg.ev_floor_fraction * capacity_kwh
    for start, end, e in kept:
        avail[start:end] = 0
        trip[start:end] = e / (end - start)
        arrival_soc = capacity_kwh - e
        if arrival_soc < floor:
            forced[end] = min(charger_kw, (floor - arrival_soc) / eta)
    avail, trip, forced = avail[:horizon], trip[:horizon], forced[:horizon]
    return EvSchedule(avail, trip, forced, _departures(avail))


# --- assembly and IO --------------------------------------------------------------------

@lru_cache(maxsize=4)
def _national(cfg: SeriesConfig):
    temp = gen_temperature(cfg.horizon, cfg.seed, cfg)
    return {
        "base2017": gen_prices(cfg.horizon, "base2017", cfg.seed, cfg),
        "hi2022": gen_prices(cfg.horizon, "hi2022", cfg.seed, cfg),
        "solar": gen_solar(cfg.horizon, cfg.seed, cfg),
        "temp": temp,
        "cop": cop_from_temperature(temp, cfg),
    }


def household_series(hh: Household, cfg: SeriesConfig = SeriesConfig(),
                     price_mode: str = "base2017") -> ExogenousSeries:
    """National price/solar/temperature series combined with household-specific demand."""
    if price_mode not in PRICE_MODES:
        raise SeriesError(f"unknown price mode {price_mode!r}")
    nat = _national(cfg)
    H = cfg.horizon
    if hh.park.ev_battery_kwh > 0:
        ev = gen_ev_schedule(hh.series_seed, H, hh.park.ev_battery_kwh, hh.park.ev_charger_kw, cfg)
    else:
        ev = EvSchedule(np.ones(H, dtype=np.int8), np.zeros(H), np.zeros(H), np.zeros(0, dtype=np.int64))
    heat = gen_heat_demand(hh.area_m2, hh.building_age_band, nat["temp"], hh.series_seed, cfg)
    base = gen_base_load(hh.category, hh.series_seed, H, cfg)
    series = ExogenousSeries(nat[price_mode], nat["solar"], nat["temp"], nat["cop"], heat, base,
                             ev.available, ev.trip_kwh, ev.forced_kwh, ev.departure_hours)
    return validate_series(series)


@dataclass(frozen=True)
class SeriesProvider:
    """Picklable mapping from household and price mode to its exogenous series."""

    config: SeriesConfig = SeriesConfig()

    def __call__(self, hh: Household, price_mode: str = "base2017") -> ExogenousSeries:
        return household_series(hh, self.config, price_mode)

    def digest(self) -> str:
        return self.config.digest()


SERIES_HEADER = ("hour", "price", "solar_norm", "temp_c", "heat_kwh", "base_kwh", "ev_avail",
                 "ev_trip_kwh", "ev_forced_kwh", "departure")


def save_series_csv(s: ExogenousSeries, path: Path) -> None:
    dep = s.departure_mask()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for t in range(s.horizon_hours):
            w.writerow([t, repr(float(s.price[t])), repr(float(s.solar_norm[t])),
                        repr(float(s.temp_c[t])), repr(float(s.heat_kwh[t])),
                        repr(float(s.base_kwh[t])), int(s.ev_available[t]),
                        repr(float(s.ev_trip_kwh[t])), repr(float(s.ev_forced_kwh[t])), int(dep[t])])


def load_series_csv(path, cfg: Optional[SeriesConfig] = None) -> ExogenousSeries:
    """Parse an hourly series file; the COP column is derived from ``temp_c``."""
    cfg = cfg or SeriesConfig()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SeriesError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in SERIES_HEADER if c not in header]
        if missing:
            raise SeriesError(f"{path}: missing column(s) {missing}")
        idx = {c: header.index(c) for c in SERIES_HEADER}
        cols = {c: [] for c in SERIES_HEADER}
        for r, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise SeriesError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
            for c in SERIES_HEADER:
                raw = row[idx[c]].strip()
                try:
                    val = float(raw)
                except ValueError:
                    raise SeriesError(f"{path}: row {r}, column {c}: not a number ({raw!r})") from None
                if not math.isfinite(val):
                    raise SeriesError(f"{path}: row {r}, column {c}: non-finite value")
                cols[c].append(val)
    hours = np.asarray(cols["hour"])
    if hours.size == 0:
        raise SeriesError(f"{path}: no data rows")
    if not np.array_equal(hours, np.arange(hours.size)):
        raise SeriesError(f"{path}: hour column must count 0..{hours.size - 1}")
    temp = np.asarray(cols["temp_c"])
    dep_flags = np.asarray(cols["departure"])
    if not np.all((dep_flags == 0) | (dep_flags == 1)):
        bad = int(np.flatnonzero((dep_flags != 0) & (dep_flags != 1))[0])
        raise SeriesError(f"{path}: row {bad}, column departure: must be 0 or 1")
    avail = np.asarray(cols["ev_avail"])
    series = ExogenousSeries(
        price=np.asarray(cols["price"]), solar_norm=np.asarray(cols["solar_norm"]), temp_c=temp,
        cop=cop_from_temperature(temp, cfg), heat_kwh=np.asarray(cols["heat_kwh"]),
        base_kwh=np.asarray(cols["base_kwh"]),
        ev_available=avail.astype(np.int8) if np.all((avail == 0) | (avail == 1)) else avail,
        ev_trip_kwh=np.asarray(cols["ev_trip_kwh"]), ev_forced_kwh=np.asarray(cols["ev_forced_kwh"]),
        departure_hours=np.flatnonzero(dep_flags == 1).astype(np.int64))
    try:
        return validate_series(series)
    except SeriesError as exc:
        raise SeriesError(f"{path}: {exc}") from None

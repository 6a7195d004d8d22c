"""Socio-economic household categories, technology sizing and synthetic populations."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class DomainError(ValueError):
    pass


class Occupancy(str, Enum):
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    P5PLUS = "P5plus"


class AreaBand(str, Enum):
    A1 = "A1"
    A2 = "A2"
    A3 = "A3"


class IncomeBand(str, Enum):
    E1 = "E1"
    E2 = "E2"
    E3 = "E3"


AGE_BANDS = ("old", "mid", "new")

A2_LOWER_M2 = 110.0
A3_LOWER_M2 = 146.0

PV_KWP_PER_M2 = 0.039
PV_KWP_PER_BATTERY_KWH = 1.375
HP_KW_PER_M2 = 0.031
HST_KWH_PER_M2 = 0.045


@dataclass(frozen=True, order=True)
class CategoryKey:
    occupancy: Occupancy
    area_band: AreaBand
    income_band: IncomeBand

    @property
    def label(self) -> str:
        return f"{self.occupancy.value}x{self.area_band.value}x{self.income_band.value}"

    @classmethod
    def parse(cls, label: str) -> "CategoryKey":
        try:
            occ, area, inc = label.split("x")
            return cls(Occupancy(occ), AreaBand(area), IncomeBand(inc))
        except ValueError as exc:
            raise DomainError(f"bad category label {label!r}") from exc


def all_categories() -> list[CategoryKey]:
    """The full 4 x 3 x 3 cross product, in a fixed order."""
    return [CategoryKey(o, a, i) for o, a, i in itertools.product(Occupancy, AreaBand, IncomeBand)]


@dataclass(frozen=True)
class SizingDefaults:
    ev_battery_kwh: float = 40.0
    ev_charger_kw: float = 11.0
    fuse_kw: float = 25.0
    battery_c_rate: float = 0.5  # kW per kWh of stationary battery
    hst_c_rate: float = 1.0  # kW_th per kWh_th of heat storage


@dataclass(frozen=True)
class TechnologyPark:
    pv_kwp: float
    battery_kwh: float
    battery_charge_kw: float
    hp_kw_el: float
    hst_kwh_th: float
    hst_charge_kw_th: float
    ev_battery_kwh: float
    ev_charger_kw: float
    fuse_kw: float

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value >= 0:
                raise DomainError(f"technology park field {name} must be >= 0, got {value}")

    @classmethod
    def empty(cls, fuse_kw: float = 25.0) -> "TechnologyPark":
        return cls(0, 0, 0, 0, 0, 0, 0, 0, fuse_kw)


def classify_area(area_m2: float) -> AreaBand:
    if not area_m2 > 0:
        raise DomainError(f"dwelling area must be positive, got {area_m2}")
    if area_m2 < A2_LOWER_M2:
        return AreaBand.A1
    if area_m2 < A3_LOWER_M2:
        return AreaBand.A2
    return AreaBand.A3


def size_technologies(area_m2: float, defaults: SizingDefaults = SizingDefaults()) -> TechnologyPark:
    """Size PV, battery, heat pump and heat store from the heated area."""
    if not area_m2 > 0:
        raise DomainError(f"dwelling area must be positive, got {area_m2}")
    pv = PV_KWP_PER_M2 * area_m2
    battery = pv / PV_KWP_PER_BATTERY_KWH
    hst = HST_KWH_PER_M2 * area_m2
    return TechnologyPark(
        pv_kwp=pv,
        battery_kwh=battery,
        battery_charge_kw=defaults.battery_c_rate * battery,
        hp_kw_el=HP_KW_PER_M2 * area_m2,
        hst_kwh_th=hst,
        hst_charge_kw_th=defaults.hst_c_rate * hst,
        ev_battery_kwh=defaults.ev_battery_kwh,
        ev_charger_kw=defaults.ev_charger_kw,
        fuse_kw=defaults.fuse_kw,
    )


@dataclass(frozen=True)
class Household:
    id: str
    category: CategoryKey
    area_m2: float
    building_age_band: str
    park: TechnologyPark
    series_seed: int

    def __post_init__(self):
        if classify_area(self.area_m2) is not self.category.area_band:
            raise DomainError(f"household {self.id}: area {self.area_m2} m2 is not in band "
                              f"{self.category.area_band.value}")
        if self.building_age_band not in AGE_BANDS:
            raise DomainError(f"unknown building age band {self.building_age_band!r}")


@dataclass(frozen=True)
class PopulationSpec:
    households_per_category: int = 10
    excluded: tuple[str, ...] = ()
    only: Optional[tuple[str, ...]] = None
    area_ranges: tuple[tuple[float, float], ...] = ((70.0, 110.0), (110.0, 146.0), (146.0, 250.0))
    sizing: SizingDefaults = field(default_factory=SizingDefaults)

    def enabled_categories(self) -> list[CategoryKey]:
        cats = all_categories()
        if self.only is not None:
            wanted = {CategoryKey.parse(lbl) for lbl in self.only}
            cats = [c for c in cats if c in wanted]
        dropped = {CategoryKey.parse(lbl) for lbl in self.excluded}
        return [c for c in cats if c not in dropped]


def derive_seed(seed: int, household_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{household_id}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def synthesize_population(spec: PopulationSpec, seed: int) -> list[Household]:
    """Equal-sized synthetic households for every enabled category.

    Each household draws from its own generator keyed by ``(seed, id)`` so the
    result does not depend on which other categories are enabled.
    """
    if spec.households_per_category < 1:
        raise DomainError("households_per_category must be >= 1")
    cats = spec.enabled_categories()
    if not cats:
        raise DomainError("no categories enabled")
    bands = list(AreaBand)
    out = []
    for cat in cats:
        lo, hi = spec.area_ranges[bands.index(cat.area_band)]
        for k in range(spec.households_per_category):
            hid = f"{cat.label}-{k:04d}"
            hseed = derive_seed(seed, hid)
            rng = np.random.default_rng(hseed)
            area = round(float(rng.uniform(lo, hi)), 3)
            # rounding may land on an exclusive upper edge
            if classify_area(area) is not cat.area_band:
                area = round(hi - 0.001, 3)
            age = AGE_BANDS[int(rng.integers(0, len(AGE_BANDS)))]
            out.append(Household(hid, cat, area, age, size_technologies(area, spec.sizing), hseed))
    return out


POPULATION_HEADER = ("id", "occupancy", "area_band", "income_band", "area_m2", "age_band",
                     "pv_kwp", "battery_kwh", "hp_kw", "hst_kwh", "seed")


def population_to_csv(households: Iterable[Household], path: Optional[Path] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(POPULATION_HEADER)
    for h in households:
        p = h.park
        w.writerow([h.id, h.category.occupancy.value, h.category.area_band.value,
                    h.category.income_band.value, repr(h.area_m2), h.building_age_band,
                    repr(p.pv_kwp), repr(p.battery_kwh), repr(p.hp_kw_el), repr(p.hst_kwh_th),
                    h.series_seed])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def population_from_csv(path: Path, sizing: SizingDefaults = SizingDefaults()) -> list[Household]:
    """Read a population file; PV, battery, HP and HST columns override the sizing rule."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(POPULATION_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise DomainError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            cat = CategoryKey(Occupancy(row["occupancy"]), AreaBand(row["area_band"]),
                              IncomeBand(row["income_band"]))
            area = float(row["area_m2"])
            park = size_technologies(area, sizing)
            battery = float(row["battery_kwh"])
            hst = float(row["hst_kwh"])
            park = replace(park, pv_kwp=float(row["pv_kwp"]), battery_kwh=battery,
                           battery_charge_kw=sizing.battery_c_rate * battery,
                           hp_kw_el=float(row["hp_kw"]), hst_kwh_th=hst,
                           hst_charge_kw_th=sizing.hst_c_rate * hst)
            out.append(Household(row["id"], cat, area, row["age_band"], park, int(row["seed"])))
    return out


def population_hash(households: Sequence[Household]) -> str:
    return hashlib.sha256(population_to_csv(households).encode()).hexdigest()

"""YAML run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .batch import SolveOptions
from .household import EfficiencySet
from .lpcore import ToleranceSet
from .population import PopulationSpec, SizingDefaults
from .timeseries import SeriesConfig

DEFAULT_SEED = 2017


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = DEFAULT_SEED
    population: PopulationSpec = field(default_factory=PopulationSpec)
    series: SeriesConfig = field(default_factory=SeriesConfig)
    solver: SolveOptions = field(default_factory=SolveOptions)


def _take(cls, data, section):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")
    return data


def parse_config(data: Optional[dict]) -> RunConfig:
    data = dict(data or {})
    unknown = sorted(set(data) - {"seed", "population", "timeseries", "solver"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    cfg = RunConfig(seed=int(data.get("seed", DEFAULT_SEED)))

    pop = data.get("population") or {}
    pop = dict(_take(PopulationSpec, pop, "population"))
    if "sizing" in pop:
        pop["sizing"] = SizingDefaults(**_take(SizingDefaults, pop["sizing"], "population.sizing"))
    for key in ("excluded", "only"):
        if pop.get(key) is not None:
            pop[key] = tuple(pop[key])
    if "area_ranges" in pop:
        pop["area_ranges"] = tuple(tuple(float(v) for v in r) for r in pop["area_ranges"])
    cfg.population = PopulationSpec(**pop)

    cfg.series = SeriesConfig.from_mapping(data.get("timeseries") or {})

    sol = dict(_take(SolveOptions, data.get("solver") or {}, "solver"))
    if "tolerances" in sol:
        sol["tolerances"] = ToleranceSet(**_take(ToleranceSet, sol["tolerances"], "solver.tolerances"))
    if "efficiencies" in sol:
        sol["efficiencies"] = EfficiencySet(**_take(EfficiencySet, sol["efficiencies"], "solver.efficiencies"))
    cfg.solver = SolveOptions(**sol)
    return cfg


def load_config(path: Optional[Path]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)

from __future__ import annotations

import pytest

from taxlab.batch import SolveOptions, run_fleet
from taxlab.policy import preset
from taxlab.population import PopulationSpec, synthesize_population
from taxlab.timeseries import SeriesConfig, SeriesProvider

WEEK = SeriesConfig().with_horizon(168)
WEEK_OPTS = SolveOptions(block=72, overlap=24)


@pytest.fixture(scope="session")
def week_store(tmp_path_factory):
    """12 households (one per occupancy x area cell, income E2) over the first week of January."""
    only = tuple(f"{o}x{a}xE2" for o in ("P1", "P2", "P3", "P5plus") for a in ("A1", "A2", "A3"))
    pop = synthesize_population(PopulationSpec(households_per_category=1, only=only), 21)
    path = tmp_path_factory.mktemp("week_store")
    rep = run_fleet(pop, SeriesProvider(WEEK), [preset("BAU"), preset("NTAX"), preset("NTAX38")], 1, path,
                    WEEK_OPTS)
    assert rep.failed == 0
    return rep.store


_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    _CRITERIA[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

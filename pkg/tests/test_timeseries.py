from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from taxlab.population import CategoryKey, PopulationSpec, synthesize_population
from taxlab.timeseries import (SeriesConfig, SeriesError, SeriesProvider, cop_from_temperature, gen_base_load,
                               gen_ev_schedule, gen_heat_demand, gen_prices, gen_solar, gen_temperature,
                               household_series, load_series_csv, save_series_csv, validate_series)

H = 8760


@pytest.fixture(scope="module")
def prices():
    return gen_prices(H, "base2017", 2017), gen_prices(H, "hi2022", 2017)


def test_price_levels(prices):
    base, hi = prices
    assert 0.027 <= base.mean() <= 0.033
    assert hi.mean() / base.mean() == pytest.approx(4.0, abs=1e-9)
    assert hi.std() / base.std() == pytest.approx(3.0, abs=1e-9)
    assert np.corrcoef(base, hi)[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(base, gen_prices(H, "base2017", 2017))
    assert not np.array_equal(base, gen_prices(H, "base2017", 2018))


def test_price_errors():
    with pytest.raises(SeriesError):
        gen_prices(H, "spot", 1)
    with pytest.raises(SeriesError):
        gen_prices(10, "base2017", 1)


def test_solar_targets():
    s = gen_solar(H, 2017)
    assert 1059 - 60 <= s.sum() <= 1059 + 60
    assert s.min() >= 0 and s.max() <= 1
    assert s[3] == 0.0  # 03:00 on 1 January
    hours_per_month = np.cumsum([0, 31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31]) * 24
    june = s[hours_per_month[5]:hours_per_month[6]].sum()
    dec = s[hours_per_month[11]:hours_per_month[12]].sum()
    assert june > 4 * dec
    night = (np.arange(H) % 24 < 2) | (np.arange(H) % 24 >= 23)
    assert np.all(s[night] == 0)


@pytest.mark.parametrize("temp, cop", [(7, 2.8), (-30, 1.5), (40, 4.5), (17, 3.6)])
def test_cop_law(temp, cop):
    assert cop_from_temperature(np.array([temp]))[0] == pytest.approx(cop)


def test_heat_demand_population_mean_and_floor():
    pop = synthesize_population(PopulationSpec(), 2017)
    temp = gen_temperature(H, 2017)
    totals = [gen_heat_demand(h.area_m2, h.building_age_band, temp, h.series_seed).sum() for h in pop]
    assert 12600 <= np.mean(totals) <= 15400
    warm = gen_heat_demand(120, "old", np.full(H, 25.0), 3)
    assert np.allclose(warm, SeriesConfig().dhw_kwh_per_hour)
    a = gen_heat_demand(120, "mid", temp, 5)
    assert np.array_equal(a, gen_heat_demand(120, "mid", temp, 5))
    with pytest.raises(SeriesError):
        gen_heat_demand(0, "mid", temp, 5)


def test_base_load():
    small = gen_base_load(CategoryKey.parse("P1xA1xE1"), 7)
    big = gen_base_load(CategoryKey.parse("P5plusxA3xE1"), 7)
    assert small.sum() < big.sum()
    for seed in range(20):
        tot = gen_base_load(CategoryKey.parse("P2xA2xE2"), seed).sum()
        assert 2500 * 0.85 <= tot <= 2500 * 1.15
    assert small.min() >= 0
    assert np.array_equal(small, gen_base_load(CategoryKey.parse("P1xA1xE1"), 7))


@pytest.mark.parametrize("seed", range(12))
def test_ev_schedule(seed):
    ev = gen_ev_schedule(seed, H)
    assert 1800 - 1e-6 <= ev.trip_kwh.sum() <= 3200 + 1e-6
    assert 0.55 <= ev.available.mean() <= 0.95
    dep = ev.departure_hours
    assert dep.size > 0
    assert np.all(ev.available[dep] == 1) and np.all(ev.available[dep + 1] == 0)
    assert np.all(ev.trip_kwh[ev.available == 1] == 0)
    assert np.all(ev.forced_kwh[ev.available == 0] == 0)
    assert np.array_equal(ev.trip_kwh, gen_ev_schedule(seed, H).trip_kwh)


def test_ev_schedule_needs_a_week():
    with pytest.raises(SeriesError):
        gen_ev_schedule(1, 100)


def test_generated_series_pass_validator():
    pop = synthesize_population(PopulationSpec(households_per_category=1), 3)
    prov = SeriesProvider(SeriesConfig().with_horizon(24 * 14))
    for h in pop[::5]:
        for mode in ("base2017", "hi2022"):
            s = prov(h, mode)
            assert validate_series(s) is s
            assert s.horizon_hours == 336


def _small_series():
    pop = synthesize_population(PopulationSpec(households_per_category=1, only=("P2xA2xE2",)), 3)
    return household_series(pop[0], SeriesConfig().with_horizon(168))


def test_csv_round_trip(tmp_path):
    s = _small_series()
    path = tmp_path / "s.csv"
    save_series_csv(s, path)
    assert path.read_text().splitlines()[0] == \
        "hour,price,solar_norm,temp_c,heat_kwh,base_kwh,ev_avail,ev_trip_kwh,ev_forced_kwh,departure"
    back = load_series_csv(path)
    for f in dataclasses.fields(s):
        assert np.array_equal(getattr(s, f.name), getattr(back, f.name)), f.name


def test_csv_24_rows(tmp_path):
    s = _small_series().window(0, 24)
    path = tmp_path / "s.csv"
    save_series_csv(s, path)
    assert load_series_csv(path).horizon_hours == 24


def _corrupt(tmp_path, row, column, value):
    s = _small_series()
    path = tmp_path / "s.csv"
    save_series_csv(s, path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    cells = lines[row + 1].split(",")
    cells[header.index(column)] = value
    lines[row + 1] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    return path, s


def test_csv_rejects_solar_out_of_range(tmp_path):
    path, _ = _corrupt(tmp_path, 12, "solar_norm", "1.2")
    with pytest.raises(SeriesError, match=r"row 12"):
        load_series_csv(path)


def test_csv_rejects_trip_while_home(tmp_path):
    s = _small_series()
    home = int(np.flatnonzero(s.ev_available == 1)[3])
    path, _ = _corrupt(tmp_path, home, "ev_trip_kwh", "2.0")
    with pytest.raises(SeriesError, match="ev_trip_kwh"):
        load_series_csv(path)


def test_csv_rejects_nan_and_missing_column(tmp_path):
    path, _ = _corrupt(tmp_path, 5, "price", "nan")
    with pytest.raises(SeriesError, match="row 5, column price"):
        load_series_csv(path)
    bad = tmp_path / "b.csv"
    bad.write_text("hour,price\n0,0.1\n")
    with pytest.raises(SeriesError, match="missing column"):
        load_series_csv(bad)


def test_validator_rejects_length_mismatch():
    s = _small_series()
    with pytest.raises(SeriesError, match="length"):
        validate_series(dataclasses.replace(s, heat_kwh=s.heat_kwh[:-1]))


def test_config_mapping():
    cfg = SeriesConfig.from_mapping({"horizon": 48, "price_mean": 0.04})
    assert cfg.price_mean == 0.04
    with pytest.raises(SeriesError):
        SeriesConfig.from_mapping({"bogus": 1})
    assert cfg.digest() != SeriesConfig().digest()

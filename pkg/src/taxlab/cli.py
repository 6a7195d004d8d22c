"""Command-line entry point: ``taxlab``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .batch import ResultStore, StoreMismatch, run_fleet
from .config import ConfigError, RunConfig, load_config
from .policy import (PRESET_NAMES, CalibrationError, CalibrationResult, PolicyError,
                     calibrate_revenue_neutral, preset)
from .population import DomainError, population_from_csv, population_to_csv, synthesize_population
from .report import (REFERENCE_KEYS, ReportError, category_delta_matrix, flow_delta_matrix, headline_summary,
                     relative_difference_curve, sorted_cost_curve, with_reference)
from .timeseries import SeriesError, SeriesProvider, household_series, save_series_csv

logger = logging.getLogger("taxlab")


class CliError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    series_cfg = getattr(args, "series_config", None)
    if series_cfg is not None:
        cfg.series = load_config(series_cfg).series
    horizon = getattr(args, "horizon", None)
    if horizon is not None:
        cfg.series = cfg.series.with_horizon(horizon)
    return cfg


def _households(args, cfg):
    if getattr(args, "population", None):
        return population_from_csv(args.population, cfg.population.sizing)
    return synthesize_population(cfg.population, cfg.seed)


def _scenarios(names: str, calibration, accept_placeholder: bool):
    out = []
    for name in [n.strip() for n in names.split(",") if n.strip()]:
        if name == "NTAX38":
            if calibration is not None:
                cal = CalibrationResult.from_json(Path(calibration).read_text())
                out.append(preset(name, cal.tau_star / cal.tau_bau))
                continue
            if not accept_placeholder:
                raise CliError("NTAX38 needs --calibration FILE from `taxlab calibrate`, "
                               "or --accept-placeholder to use the uncalibrated 0.62 factor")
        out.append(preset(name))
    if not out:
        raise CliError("no scenarios given")
    return out


def cmd_generate_population(args):
    cfg = _config(args)
    spec = cfg.population
    if args.households_per_category is not None:
        spec = dataclasses.replace(spec, households_per_category=args.households_per_category)
    pop = synthesize_population(spec, cfg.seed)
    text = population_to_csv(pop, args.out)
    if args.out is None:
        sys.stdout.write(text)
    logger.info("%d households", len(pop))
    return 0


def cmd_generate_series(args):
    cfg = _config(args)
    pop = _households(args, cfg)
    chosen = [h for h in pop if h.id == args.household] if args.household else pop[:1]
    if not chosen:
        raise CliError(f"household {args.household!r} not in population")
    s = household_series(chosen[0], cfg.series, args.price_mode)
    save_series_csv(s, args.out)
    return 0


def cmd_run(args):
    cfg = _config(args)
    pop = _households(args, cfg)
    scenarios = _scenarios(args.scenarios, args.calibration, args.accept_placeholder)
    opts = cfg.solver
    if args.block is not None or args.overlap is not None:
        opts = dataclasses.replace(opts, block=args.block or opts.block,
                                   overlap=opts.overlap if args.overlap is None else args.overlap)
    rep = run_fleet(pop, SeriesProvider(cfg.series), scenarios, args.workers, args.store, opts,
                    full_dispatch=args.full_dispatch, rows_per_shard=args.rows_per_shard,
                    deadline_s=args.time_limit)
    if args.calibration is not None:
        rep.store.set_calibration(Path(args.calibration).read_text())
    total = len(pop) * len(scenarios)
    print(f"{rep.solved} solved, {rep.skipped} already in store, {rep.failed} failed, "
          f"{rep.pending} pending, {total} items, {rep.seconds:.1f}s")
    for r in rep.store.failures():
        print(f"FAILED {r.household_id} {r.scenario} {r.status} hour={r.failed_hour}: {r.message}")
    return 0 if rep.complete and not rep.store.failures() else 1


def cmd_calibrate(args):
    cfg = _config(args)
    pop = _households(args, cfg)
    res = calibrate_revenue_neutral(pop, SeriesProvider(cfg.series), preset("BAU"), preset("NTAX"),
                                    args.tol_rel, workers=args.workers, opts=cfg.solver)
    text = res.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    lines = [f"trial tau={t:.6f} revenue={r:.4f}" for t, r in res.trace]
    lines.append(f"tau_star={res.tau_star:.6f} reduction={100 * res.reduction:.2f}% converged={res.converged}"
                 + (f" ({res.note})" if res.note else ""))
    print("\n".join(lines))
    return 0 if res.converged else 1


def _needs_ntax38_guard(store: ResultStore, names, accept: bool):
    if "NTAX38" not in names or accept or store.calibration is not None:
        return
    for s in store.manifest["scenarios"]:
        if s["name"] == "NTAX38" and s.get("placeholder"):
            raise CliError("store holds NTAX38 at the uncalibrated placeholder rate; "
                           "pass --accept-placeholder or rerun with --calibration")


def cmd_report(args):
    store = ResultStore(args.store)
    kind = args.kind
    if kind == "curve":
        names = [args.scenario]
    elif kind == "summary":
        names = args.scenarios.split(",") if args.scenarios else store.scenarios
    else:
        names = [args.base, args.alt]
    _needs_ntax38_guard(store, names, args.accept_placeholder)

    index = False
    if kind == "curve":
        df = sorted_cost_curve(store, args.scenario)
    elif kind == "reldiff":
        df = relative_difference_curve(store, args.base, args.alt)
    elif kind == "categories":
        df = category_delta_matrix(store, args.base, args.alt, args.income).to_frame()
    elif kind == "flows":
        df = flow_delta_matrix(store, args.base, args.alt)
        index = True
    else:
        df = headline_summary(store, names)
    if args.paper_context:
        if index:
            df = df.reset_index()
            index = False
        df = with_reference(df, REFERENCE_KEYS[kind])
    text = df.to_csv(index=index, float_format=None, lineterminator="\n")
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taxlab", description=__doc__)
    p.add_argument("--config", type=Path, help="YAML configuration file")
    p.add_argument("--seed", type=int, help="population seed (overrides the config)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-population", help="write a synthetic population CSV")
    g.add_argument("--out", type=Path)
    g.add_argument("--households-per-category", type=int)
    g.set_defaults(func=cmd_generate_population)

    g = sub.add_parser("generate-series", help="write one household's hourly exogenous series")
    g.add_argument("--population", type=Path)
    g.add_argument("--household")
    g.add_argument("--series-config", type=Path)
    g.add_argument("--price-mode", default="base2017", choices=("base2017", "hi2022"))
    g.add_argument("--horizon", type=int)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_generate_series)

    g = sub.add_parser("run", help="solve a household x scenario fleet into a result store")
    g.add_argument("--population", type=Path)
    g.add_argument("--series-config", type=Path)
    g.add_argument("--scenarios", default="BAU,NTAX", help=f"comma list of {', '.join(PRESET_NAMES)}")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--store", type=Path, required=True)
    g.add_argument("--full-dispatch", action="store_true", help="also keep hourly dispatch CSVs")
    g.add_argument("--calibration", type=Path, help="calibration JSON setting the NTAX38 rate")
    g.add_argument("--accept-placeholder", action="store_true")
    g.add_argument("--horizon", type=int)
    g.add_argument("--block", type=int)
    g.add_argument("--overlap", type=int)
    g.add_argument("--rows-per-shard", type=int, default=16)
    g.add_argument("--time-limit", type=float, help="stop handing out work after this many seconds")
    g.set_defaults(func=cmd_run)

    g = sub.add_parser("calibrate", help="find the revenue-neutral uniform tax rate")
    g.add_argument("--population", type=Path)
    g.add_argument("--series-config", type=Path)
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--tol-rel", type=float, default=1e-3)
    g.add_argument("--horizon", type=int)
    g.add_argument("--out", type=Path)
    g.set_defaults(func=cmd_calibrate)

    g = sub.add_parser("report", help="tables from a result store")
    g.add_argument("kind", choices=("curve", "reldiff", "categories", "flows", "summary"))
    g.add_argument("--store", type=Path, required=True)
    g.add_argument("--scenario", default="BAU")
    g.add_argument("--base", default="BAU")
    g.add_argument("--alt", default="NTAX")
    g.add_argument("--scenarios", help="comma list for the summary; first is the base")
    g.add_argument("--income", choices=("E1", "E2", "E3"))
    g.add_argument("--out", type=Path)
    g.add_argument("--paper-context", action="store_true", help="append reference rows from the Danish study")
    g.add_argument("--accept-placeholder", action="store_true")
    g.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, DomainError, SeriesError, PolicyError, CalibrationError, ReportError,
            StoreMismatch, FileNotFoundError) as exc:
        print(f"taxlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Parallel household x scenario fleets with a resumable on-disk result store.

Store layout::

    store/
      manifest.json          hashes, scenarios, tolerances, code version
      shards/shard-00000.csv one row per (household, scenario), written atomically
      dispatch/<hh>__<scenario>.csv   optional hourly dispatch

Only the parent process writes; workers hand back result records.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import __version__
from .household import (DEFAULT_BLOCK, DEFAULT_OVERLAP, ENERGY_FLOWS, EfficiencySet, self_consumption_share,
                        solve_household)
from .lpcore import BlockInfeasible, SolverError, ToleranceSet
from .policy import CostBreakdown, TaxPolicy, cost_breakdown
from .population import Household, population_hash
from .timeseries import SeriesProvider

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SHARD_DIR = "shards"
DISPATCH_DIR = "dispatch"

RESULT_COLUMNS = (
    "household_id", "category", "scenario", "status", "failed_hour", "message", "objective",
    "electricity_cost", "grid_tariff_cost", "tax_paid", "tax_refunded", "total", "self_consumption",
) + ENERGY_FLOWS


class StoreMismatch(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    block: int = DEFAULT_BLOCK
    overlap: int = DEFAULT_OVERLAP
    backend: str = "highs"
    tolerances: ToleranceSet = ToleranceSet()
    efficiencies: EfficiencySet = EfficiencySet()

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ResultRecord:
    household_id: str
    category: str
    scenario: str
    status: str  # "ok", "infeasible" or "error"
    failed_hour: Optional[int] = None
    message: str = ""
    objective: Optional[float] = None
    breakdown: Optional[CostBreakdown] = None
    self_consumption: Optional[float] = None
    flows: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def key(self) -> tuple[str, str]:
        return self.household_id, self.scenario

    def to_row(self) -> list[str]:
        b = self.breakdown

        def f(v):
            return "" if v is None else repr(float(v))

        vals = {
            "household_id": self.household_id, "category": self.category, "scenario": self.scenario,
            "status": self.status, "failed_hour": "" if self.failed_hour is None else str(self.failed_hour),
            "message": self.message, "objective": f(self.objective),
            "electricity_cost": f(b and b.electricity_cost), "grid_tariff_cost": f(b and b.grid_tariff_cost),
            "tax_paid": f(b and b.tax_paid), "tax_refunded": f(b and b.tax_refunded),
            "total": f(b and b.total), "self_consumption": f(self.self_consumption),
        }
        for k in ENERGY_FLOWS:
            vals[k] = f(self.flows.get(k))
        return [vals[c] for c in RESULT_COLUMNS]

    @classmethod
    def from_row(cls, row: dict) -> "ResultRecord":
        def f(name):
            v = row[name]
            return None if v == "" else float(v)

        b = None
        if row["status"] == "ok":
            b = CostBreakdown(f("electricity_cost"), f("grid_tariff_cost"), f("tax_paid"), f("tax_refunded"))
        return cls(row["household_id"], row["category"], row["scenario"], row["status"],
                   None if row["failed_hour"] == "" else int(row["failed_hour"]), row["message"],
                   f("objective"), b, f("self_consumption"),
                   {k: f(k) for k in ENERGY_FLOWS if row[k] != ""})


def solve_item(hh: Household, series, policy: TaxPolicy, opts: SolveOptions, dispatch_path=None) -> ResultRecord:
    """Solve one household under one policy; failures become records, never exceptions."""
    base = dict(household_id=hh.id, category=hh.category.label, scenario=policy.name)
    try:
        res = solve_household(hh, series, policy, opts.efficiencies, opts.block, opts.overlap,
                              opts.tolerances, opts.backend)
    except BlockInfeasible as exc:
        return ResultRecord(status="infeasible", failed_hour=exc.start_hour, message=str(exc), **base)
    except (SolverError, ValueError) as exc:
        return ResultRecord(status="error", message=f"{type(exc).__name__}: {exc}", **base)
    sol = res.solution
    if dispatch_path is not None:
        _atomic_write_via(Path(dispatch_path), sol.to_csv)
    return ResultRecord(status="ok", objective=res.objective_value,
                        breakdown=cost_breakdown(sol, policy, series.price),
                        self_consumption=self_consumption_share(sol), flows=sol.annual_flows(), **base)


def _worker(hh: Household, provider: SeriesProvider, policies: Sequence[TaxPolicy], opts: SolveOptions,
            dispatch_dir: Optional[str]) -> list[ResultRecord]:
    cache = {}
    out = []
    for pol in policies:
        if pol.price_mode not in cache:
            cache[pol.price_mode] = provider(hh, pol.price_mode)
        dpath = None if dispatch_dir is None else Path(dispatch_dir) / f"{hh.id}__{pol.name}.csv"
        out.append(solve_item(hh, cache[pol.price_mode], pol, opts, dpath))
    return out


# --- store -----------------------------------------------------------------------------

def _atomic_write_via(path: Path, writer) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    os.close(fd)
    try:
        writer(Path(tmp))
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_via(path, lambda p: p.write_text(text))


def build_manifest(population: Sequence[Household], provider: SeriesProvider, scenarios: Sequence[TaxPolicy],
                   opts: SolveOptions) -> dict:
    return {
        "population_hash": population_hash(population),
        "series_config_hash": provider.digest(),
        "scenarios": [p.as_dict() for p in scenarios],
        "solver": opts.as_dict(),
        "code_version": __version__,
        "households": len(population),
    }


_IDENTITY_KEYS = ("population_hash", "series_config_hash", "scenarios", "solver", "code_version")


class ResultStore:
    """Read side of a result directory.  Every query is a pure function of the files."""

    def __init__(self, path: Path):
        self.path = Path(path)
        mpath = self.path / MANIFEST
        if not mpath.exists():
            raise FileNotFoundError(f"{self.path} has no {MANIFEST}")
        self.manifest = json.loads(mpath.read_text())
        self._records = None

    @property
    def records(self) -> list[ResultRecord]:
        if self._records is None:
            recs = {}
            for shard in sorted((self.path / SHARD_DIR).glob("shard-*.csv")):
                with open(shard, newline="") as fh:
                    for row in csv.DictReader(fh):
                        r = ResultRecord.from_row(row)
                        if r.key in recs:
                            raise StoreMismatch(f"duplicate result for {r.key} in {shard.name}")
                        recs[r.key] = r
            self._records = [recs[k] for k in sorted(recs)]
        return self._records

    def completed(self) -> set[tuple[str, str]]:
        return {r.key for r in self.records}

    @property
    def scenarios(self) -> list[str]:
        return [s["name"] for s in self.manifest["scenarios"]]

    def scenario(self, name: str, ok_only: bool = True) -> dict[str, ResultRecord]:
        if name not in self.scenarios:
            raise KeyError(f"scenario {name!r} not in store (has {', '.join(self.scenarios)})")
        return {r.household_id: r for r in self.records if r.scenario == name and (r.ok or not ok_only)}

    def failures(self) -> list[ResultRecord]:
        return [r for r in self.records if not r.ok]

    @property
    def calibration(self) -> Optional[dict]:
        return self.manifest.get("calibration")

    def set_calibration(self, result_json: str) -> None:
        self.manifest["calibration"] = json.loads(result_json)
        _atomic_write_text(self.path / MANIFEST, json.dumps(self.manifest, indent=2, sort_keys=True))

    def canonical_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in self.records:
            w.writerow(r.to_row())
        return buf.getvalue()

    def canonical_digest(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    def to_frame(self):
        import pandas as pd

        return pd.read_csv(io.StringIO(self.canonical_text()), dtype={"household_id": str, "failed_hour": "Int64"},
                           keep_default_na=False, na_values=[""])


class _ShardWriter:
    def __init__(self, root: Path, rows_per_shard: int):
        self.dir = root / SHARD_DIR
        self.dir.mkdir(parents=True, exist_ok=True)
        existing = sorted(self.dir.glob("shard-*.csv"))
        self.next_id = 1 + max((int(p.stem.split("-")[1]) for p in existing), default=-1)
        self.rows_per_shard = rows_per_shard
        self.pending: list[ResultRecord] = []
        self.written = 0

    def add(self, recs: Iterable[ResultRecord]) -> None:
        self.pending.extend(recs)
        if len(self.pending) >= self.rows_per_shard:
            self.flush()

    def flush(self) -> None:
        if not self.pending:
            return
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in sorted(self.pending, key=lambda r: r.key):
            w.writerow(r.to_row())
        _atomic_write_text(self.dir / f"shard-{self.next_id:05d}.csv", buf.getvalue())
        self.next_id += 1
        self.written += len(self.pending)
        self.pending = []


@dataclass
class FleetReport:
    store: ResultStore
    solved: int
    skipped: int
    failed: int
    seconds: float
    pending: int = 0

    @property
    def complete(self) -> bool:
        return self.pending == 0


def open_store(path: Path, manifest: dict) -> None:
    """Create the store or check that an existing one belongs to the same run."""
    path = Path(path)
    mpath = path / MANIFEST
    if mpath.exists():
        old = json.loads(mpath.read_text())
        diff = [k for k in _IDENTITY_KEYS if old.get(k) != manifest.get(k)]
        if diff:
            raise StoreMismatch(f"{path}: existing store differs in {', '.join(diff)}")
        return
    path.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(mpath, json.dumps(manifest, indent=2, sort_keys=True))


def run_fleet(population: Sequence[Household], provider: SeriesProvider, scenarios: Sequence[TaxPolicy],
              workers: int, store_path: Path, opts: SolveOptions = SolveOptions(), full_dispatch: bool = False,
              rows_per_shard: int = 16, stop_after: Optional[int] = None,
              deadline_s: Optional[float] = None) -> FleetReport:
    """Solve every pending (household, scenario) pair and append it to the store.

    ``stop_after`` ends the run once that many results are on disk, which is
    how tests emulate an interrupted run.  ``deadline_s`` stops handing out
    work after that many seconds; a later call resumes where it ended.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    names = [p.name for p in scenarios]
    if len(set(names)) != len(names):
        raise ValueError("scenario names must be unique")
    ids = [h.id for h in population]
    if len(set(ids)) != len(ids):
        raise ValueError("household ids must be unique")
    store_path = Path(store_path)
    open_store(store_path, build_manifest(population, provider, scenarios, opts))
    done = ResultStore(store_path).completed()
    dispatch_dir = str(store_path / DISPATCH_DIR) if full_dispatch else None

    tasks = []
    for hh in sorted(population, key=lambda h: h.id):
        todo = [p for p in scenarios if (hh.id, p.name) not in done]
        if todo:
            tasks.append((hh, todo))
    skipped = len(population) * len(scenarios) - sum(len(t) for _, t in tasks)
    writer = _ShardWriter(store_path, rows_per_shard)
    failed = 0
    t_start = time.perf_counter()

    def take(recs):
        nonlocal failed
        for r in recs:
            if not r.ok:
                failed += 1
                logger.warning("%s/%s %s: %s", r.household_id, r.scenario, r.status, r.message)
        writer.add(recs)
        if deadline_s is not None and time.perf_counter() - t_start > deadline_s:
            return True
        return stop_after is not None and writer.written + len(writer.pending) >= stop_after

    stop = False
    if workers == 1:
        for hh, todo in tasks:
            if take(_worker(hh, provider, todo, opts, dispatch_dir)):
                stop = True
                break
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            queue = iter(tasks)
            running = set()

            def top_up():
                while len(running) < 2 * workers:
                    try:
                        hh, todo = next(queue)
                    except StopIteration:
                        return
                    running.add(pool.submit(_worker, hh, provider, todo, opts, dispatch_dir))

            top_up()
            while running and not stop:
                finished, _ = wait(running, return_when=FIRST_COMPLETED)
                for fut in finished:
                    running.discard(fut)
                    if take(fut.result()):
                        stop = True
                if not stop:
                    top_up()
            for fut in running:
                fut.cancel()
    writer.flush()
    elapsed = time.perf_counter() - t_start
    logger.info("fleet: %d solved, %d skipped, %d failed in %.1fs", writer.written, skipped, failed, elapsed)
    total = len(population) * len(scenarios)
    return FleetReport(ResultStore(store_path), writer.written, skipped, failed, elapsed,
                       total - skipped - writer.written)


def fleet_revenue(population: Sequence[Household], provider: SeriesProvider, policy: TaxPolicy,
                  workers: int = 1, opts: SolveOptions = SolveOptions()) -> float:
    """Total net tax revenue with every household re-optimised under ``policy`` (no store)."""
    from .policy import tax_revenue

    recs = []
    if workers == 1:
        for hh in population:
            recs.extend(_worker(hh, provider, [policy], opts, None))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_worker, hh, provider, [policy], opts, None) for hh in population]
            for f in futs:
                recs.extend(f.result())
    bad = [r for r in recs if not r.ok]
    if bad:
        raise SolverError(f"{len(bad)} households failed under {policy.name}: {bad[0].message}")
    return tax_revenue(r.breakdown for r in sorted(recs, key=lambda r: r.household_id))

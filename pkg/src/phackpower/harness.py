"""Power studies: pools, mixing, publication selection and the test battery.

Replication ``r`` at grid position ``t`` draws from
``SeedSequence(seed, spawn_key=(1, t, r))`` and the pool from
``simulate_pool(..., seed=seed)``, so results depend on the configuration
only, never on the number of workers or the order of execution.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .battery import run_battery
from .config import PowerStudyConfig
from .dgp import SimPool, load_pool, simulate_pool
from .pubbias import draw_observed

__all__ = ["PowerRow", "PowerTable", "NumericalBudgetExceeded", "build_pool", "run_power_study", "replication_outcomes"]

log = logging.getLogger(__name__)

_FAILURE_FLAG = "qp_singular_nonreject"


class NumericalBudgetExceeded(RuntimeError):
    """Too many replications failed numerically; the table is attached."""

    def __init__(self, message: str, table: "PowerTable"):
        super().__init__(message)
        self.table = table


@dataclass(frozen=True)
class PowerRow:
    tau: float
    test: str
    rejection_rate: float
    mc_std_err: float
    n_kept_mean: float
    flags_summary: str = ""

    def as_row(self) -> dict:
        return {
            "tau": repr(self.tau),
            "test": self.test,
            "rejection_rate": repr(self.rejection_rate),
            "mc_std_err": repr(self.mc_std_err),
            "n_kept_mean": repr(self.n_kept_mean),
            "flags": self.flags_summary,
        }


@dataclass
class PowerTable:
    """Rejection rates by mixing fraction and test."""

    rows: list[PowerRow]
    mc_reps: int
    level: float = 0.05
    meta: dict = field(default_factory=dict)

    COLUMNS = ("tau", "test", "rejection_rate", "mc_std_err", "n_kept_mean", "flags")

    def rate(self, tau: float, test: str) -> float:
        for r in self.rows:
            if r.test == test and np.isclose(r.tau, tau):
                return r.rejection_rate
        raise KeyError((tau, test))

    def row(self, tau: float, test: str) -> PowerRow:
        for r in self.rows:
            if r.test == test and np.isclose(r.tau, tau):
                return r
        raise KeyError((tau, test))

    @property
    def tests(self) -> list[str]:
        return list(dict.fromkeys(r.test for r in self.rows))

    @property
    def taus(self) -> list[float]:
        return sorted({r.tau for r in self.rows})

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow(r.as_row())
        return path

    @classmethod
    def from_csv(cls, path, mc_reps: int, level: float = 0.05) -> "PowerTable":
        with open(path, newline="") as fh:
            rows = [
                PowerRow(float(d["tau"]), d["test"], float(d["rejection_rate"]), float(d["mc_std_err"]),
                         float(d["n_kept_mean"]), d["flags"])
                for d in csv.DictReader(fh)
            ]
        return cls(rows, mc_reps, level)


def build_pool(cfg: PowerStudyConfig, workers: int = 1) -> SimPool:
    """Load ``cfg.pool_path`` if given, otherwise simulate ``cfg.pool_reps`` studies."""
    if cfg.pool_path:
        return load_pool(cfg.pool_path, cfg.dgp, cfg.strategy)
    return simulate_pool(cfg.dgp, cfg.strategy, cfg.pool_reps, seed=cfg.seed, workers=workers)


def replication_outcomes(cfg: PowerStudyConfig, pool: SimPool, tau_idx: int, reps: range):
    """Decisions, flags and kept counts for a range of replications."""
    tau = cfg.tau_grid[tau_idx]
    out = []
    for r in reps:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, tau_idx, r)))
        sample = draw_observed(pool.p_hacked, pool.p_nohack, tau, cfg.n, cfg.selection, rng=rng)
        results = run_battery(sample.pvalues, cfg.tests, cfg.battery)
        out.append((sample.n_kept, [(t.reject, t.flags) for t in results]))
    return out


def _task(args):
    cfg, pool, tau_idx, start, stop = args
    return tau_idx, start, replication_outcomes(cfg, pool, tau_idx, range(start, stop))


def run_power_study(cfg: PowerStudyConfig, pool: SimPool | None = None, workers: int = 1, chunk: int = 50) -> PowerTable:
    """Rejection rates of each test on each mixing fraction.

    Raises
    ------
    NumericalBudgetExceeded
        If for some test and mixing fraction the share of replications with
        a numerical failure exceeds ``cfg.max_failure_rate``.
    """
    if pool is None:
        pool = build_pool(cfg, workers)
    if len(pool) == 0:
        raise ValueError("pool is empty")
    tasks = [
        (cfg, pool, t, s, min(s + chunk, cfg.mc_reps))
        for t in range(len(cfg.tau_grid))
        for s in range(0, cfg.mc_reps, chunk)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_task, tasks))
    else:
        parts = [_task(a) for a in tasks]
    by_tau: dict[int, list] = {t: [None] * cfg.mc_reps for t in range(len(cfg.tau_grid))}
    for t, start, outcomes in parts:
        by_tau[t][start : start + len(outcomes)] = outcomes

    rows, worst = [], 0.0
    R = cfg.mc_reps
    for t, tau in enumerate(cfg.tau_grid):
        outcomes = by_tau[t]
        kept = float(np.mean([o[0] for o in outcomes]))
        for k, name in enumerate(cfg.tests):
            rejects = sum(bool(o[1][k][0]) for o in outcomes)
            flags = Counter(f for o in outcomes for f in o[1][k][1])
            rate = rejects / R
            worst = max(worst, flags.get(_FAILURE_FLAG, 0) / R)
            summary = ";".join(f"{f}:{c}" for f, c in sorted(flags.items()))
            rows.append(PowerRow(float(tau), name, rate, float(np.sqrt(rate * (1.0 - rate) / R)), kept, summary))
        log.info("tau=%g done", tau)
    table = PowerTable(rows, R, cfg.level, {"pool_size": len(pool), "pool_dropped": pool.dropped})
    if worst > cfg.max_failure_rate:
        raise NumericalBudgetExceeded(
            f"numerical failures in {worst:.1%} of replications exceed the budget {cfg.max_failure_rate:.1%}", table
        )
    return table

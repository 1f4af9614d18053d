"""Experiment drivers: density sweeps, chain lengths, transaction aborts,
and the bin-touch Monte Carlo.  Results come back as MetricsRow lists and
can be written as CSV.
"""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import InvalidConfigError, Policy, TableConfig, make_table, random_key
from .dary import mean_bins_visited, mean_hash_functions_used
from .txn import TxnEngine, preset
from .walks import insert
from .workload import WorkloadSpec, check_serializability, run_workload

BAND = 0.005  # metrics for grid point d cover insertions made at density [d - BAND, d)
KEY_BUDGET = 4  # a trial may draw at most this many keys per slot before giving up

DEFAULT_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.925, 0.95, 0.96, 0.97, 0.975)

CSV_COLUMNS = ("experiment", "policy", "ghosts", "n", "B", "H", "density", "bins_viewed_mean",
               "chain_len_mean", "spawns_mean", "aborts", "trials", "seed")


class Experiment(str, Enum):
    SERIAL_FILL = "serial-fill"
    DARY_FILL = "dary-fill"
    CHAIN_LENGTH = "chain-length"
    TXN_ABORTS = "txn-aborts"
    TOUCH_SIM = "touch-sim"


@dataclass
class ExperimentConfig:
    experiment: Experiment
    bins: int = 1 << 10
    bin_size: int = 4
    hashes: int = 2
    policies: Sequence[Policy] = (Policy.RANDOM_KICK,)
    ghosts: bool = False
    trials: int = 50
    densities: Sequence[float] = DEFAULT_GRID
    seed: int = 0
    max_steps: Optional[int] = None
    # transactional runs
    threads: int = 8
    ops_per_txn: int = 100
    ratios: tuple[int, int, int, int] = (1, 0, 1, 1)
    presets: Sequence[int] = (1, 2, 3, 4, 5, 6)
    verify: bool = True
    # touch simulation
    t: int = 15
    j: int = 2
    rounds: int = 1000

    def validate(self) -> None:
        d = list(self.densities)
        if not d:
            raise InvalidConfigError("density grid is empty")
        if any(b <= a for a, b in zip(d, d[1:])):
            raise InvalidConfigError("density grid must be strictly increasing")
        if d[0] <= 0 or d[-1] > 0.99:
            raise InvalidConfigError("densities must lie in (0, 0.99]")
        if self.trials < 1:
            raise InvalidConfigError("trials must be >= 1")


@dataclass
class MetricsRow:
    experiment: str
    policy: str
    ghosts: bool
    n: int
    B: int
    H: int
    density: float
    bins_viewed_mean: Optional[float]
    chain_len_mean: Optional[float]
    spawns_mean: Optional[float]
    aborts: Optional[float]
    trials: int
    seed: int


@dataclass
class TrialDiagnostic:
    policy: str
    ghosts: bool
    trial: int
    failures: int
    first_failure_density: Optional[float]
    completed: bool


@dataclass
class _Buckets:
    bins: list[float]
    chain: list[float]
    spawns: list[float]
    count: list[int]

    @classmethod
    def empty(cls, k: int) -> "_Buckets":
        return cls([0.0] * k, [0.0] * k, [0.0] * k, [0] * k)


def _bucket_index(grid: Sequence[float], d: float) -> int:
    for i, g in enumerate(grid):
        if g - BAND <= d < g:
            return i
    return -1


def _key_rng(seed: int, trial: int) -> random.Random:
    # one key stream per trial, shared by every policy (common random numbers)
    return random.Random(f"{seed}:{trial}:keys")


def _table_seed(seed: int, trial: int, policy: Policy, ghosts: bool) -> int:
    return random.Random(f"{seed}:{trial}:{policy.value}:{ghosts}:table").getrandbits(63)


def fill_trial(policy: Policy, ghosts: bool, n: int, B: int, H: int, target: float, seed: int,
               trial: int, max_steps: Optional[int] = None,
               observe: Optional[Callable] = None):
    """Fill one fresh table to ``target`` density.

    ``observe(density_before, outcome, table)`` is called after every insert.
    Returns (table, failures, first_failure_density, completed).
    """
    table = make_table(TableConfig(n, B, H, policy, ghosts, _table_seed(seed, trial, policy, ghosts)))
    keys = _key_rng(seed, trial)
    goal = math.ceil(target * table.capacity - 1e-9)
    budget = KEY_BUDGET * table.capacity
    failures = 0
    first_fail = None
    k = 0
    while table.num_records < goal:
        if k >= budget:
            return table, failures, first_fail, False
        d = table.density
        out = insert(table, random_key(keys, k, n, H), max_steps)
        k += 1
        if not out.success:
            failures += 1
            if first_fail is None:
                first_fail = d
        if observe is not None:
            observe(d, out, table)
    return table, failures, first_fail, True


def _sweep(cfg: ExperimentConfig, runs: Sequence[tuple[Policy, bool]],
           diagnostics: Optional[list[TrialDiagnostic]]) -> list[MetricsRow]:
    grid = list(cfg.densities)
    rows = []
    for policy, ghosts in runs:
        per_trial = []
        for trial in range(cfg.trials):
            acc = _Buckets.empty(len(grid))

            def observe(d, out, _table, acc=acc):
                i = _bucket_index(grid, d)
                if i >= 0:
                    m = out.metrics
                    acc.bins[i] += m.bins_viewed
                    acc.chain[i] += m.chain_length
                    acc.spawns[i] += m.spawns
                    acc.count[i] += 1

            _, failures, first, done = fill_trial(policy, ghosts, cfg.bins, cfg.bin_size, cfg.hashes,
                                                  grid[-1], cfg.seed, trial, cfg.max_steps, observe)
            if diagnostics is not None and (failures or not done):
                diagnostics.append(TrialDiagnostic(policy.value, ghosts, trial, failures, first, done))
            if done:
                per_trial.append(acc)
        for i, g in enumerate(grid):
            means = [(a.bins[i] / a.count[i], a.chain[i] / a.count[i], a.spawns[i] / a.count[i])
                     for a in per_trial if a.count[i]]
            k = len(means)
            avg = [sum(col) / k for col in zip(*means)] if k else [None, None, None]
            rows.append(MetricsRow(cfg.experiment.value, policy.value, ghosts, cfg.bins, cfg.bin_size,
                                   cfg.hashes, g, avg[0], avg[1], avg[2], None, k, cfg.seed))
    return rows


def run_serial_fill(cfg: ExperimentConfig,
                    diagnostics: Optional[list[TrialDiagnostic]] = None) -> list[MetricsRow]:
    """Mean bins viewed (and chain length, spawns) per density band, averaged over trials.

    Failed inserts are counted at their full cost and the key is dropped;
    they are also reported through ``diagnostics``.
    """
    cfg.validate()
    return _sweep(cfg, [(Policy(p), cfg.ghosts) for p in cfg.policies], diagnostics)


def run_dary_fill(cfg: ExperimentConfig,
                  diagnostics: Optional[list[TrialDiagnostic]] = None) -> list[MetricsRow]:
    cfg.validate()
    if cfg.bin_size != 1:
        raise InvalidConfigError("d-ary fills need bin_size == 1")
    if cfg.ghosts:
        raise InvalidConfigError("ghost insertions need two hashes and multi-slot bins")
    return _sweep(cfg, [(Policy(p), False) for p in cfg.policies], diagnostics)


def run_chain_length(cfg: ExperimentConfig,
                     diagnostics: Optional[list[TrialDiagnostic]] = None) -> list[MetricsRow]:
    """Like run_serial_fill; search policies run both with and without ghosts."""
    cfg.validate()
    runs = []
    for p in cfg.policies:
        p = Policy(p)
        runs.append((p, False))
        if p.is_search:
            runs.append((p, True))
    return _sweep(cfg, runs, diagnostics)


def dary_constants(n: int, d: int, density: float, trials: int, seed: int) -> tuple[float, float]:
    """(random-walk bins visited per stored record, rattle hash functions used per record)."""
    visited = []
    used = []
    for trial in range(trials):
        t, *_ = fill_trial(Policy.RANDOM_KICK, False, n, 1, d, density, seed, trial)
        visited.append(mean_bins_visited(t))
        t, *_ = fill_trial(Policy.RATTLE, False, n, 1, d, density, seed, trial)
        used.append(mean_hash_functions_used(t))
    return sum(visited) / trials, sum(used) / trials


def kickouts_per_bin(n: int, B: int, density: float, trials: int, seed: int,
                     policy: Policy = Policy.RANDOM_KICK) -> float:
    """Total kick-outs performed while filling to ``density``, divided by n."""
    totals = []
    for trial in range(trials):
        t, *_ = fill_trial(policy, False, n, B, 2, density, seed, trial)
        totals.append(t.total_kickouts / n)
    return sum(totals) / trials


def chain_spawn_samples(n: int, B: int, min_density: float, max_density: float, trials: int,
                        seed: int, ghosts: bool = False) -> list[tuple[int, int]]:
    """(chain length, spawns) of every successful sorted-search insert that searched."""
    samples = []

    def observe(d, out, _table):
        if d >= min_density and out.success and out.metrics.spawns:
            samples.append((out.metrics.chain_length, out.metrics.spawns))

    for trial in range(trials):
        fill_trial(Policy.SORTED_SEARCH, ghosts, n, B, 2, max_density, seed, trial, observe=observe)
    return samples


def run_txn_aborts(cfg: ExperimentConfig, mode: str = "interleaved") -> list[MetricsRow]:
    """Cumulative aborted attempts before each density, averaged over trials, per preset."""
    cfg.validate()
    grid = list(cfg.densities)
    spec = WorkloadSpec(tuple(cfg.ratios), cfg.ops_per_txn, cfg.threads, grid[-1])
    spec.validate()
    rows = []
    for p in cfg.presets:
        totals = [0] * len(grid)
        for trial in range(cfg.trials):
            engine = TxnEngine(cfg.bins, cfg.bin_size, preset(p), seed=_txn_seed(cfg.seed, trial, p),
                               log_commits=cfg.verify)
            stats = run_workload(engine, spec, seed=_txn_seed(cfg.seed, trial, 0), mode=mode)
            if cfg.verify:
                report = check_serializability(engine)
                if not report.ok:
                    raise RuntimeError(f"preset {p} trial {trial}: serializability violated: "
                                       f"{report.violations[:3]}")
            for i, c in enumerate(stats.cumulative(grid)):
                totals[i] += c
        for g, tot in zip(grid, totals):
            rows.append(MetricsRow(cfg.experiment.value, f"preset{p}", False, cfg.bins, cfg.bin_size, 2,
                                   g, None, None, None, tot / cfg.trials, cfg.trials, cfg.seed))
    return rows


def _txn_seed(seed: int, trial: int, salt: int) -> int:
    return random.Random(f"{seed}:{trial}:{salt}:txn").getrandbits(63)


@dataclass
class TouchResult:
    t: int
    j: int
    n: int
    B: int
    rounds: int
    trials: int
    frequency: float
    bound: float
    seed: int

    @property
    def stderr(self) -> float:
        p = self.frequency
        return math.sqrt(max(p * (1 - p), 1e-300) / self.trials)


def touch_bound(t: int, j: int, n: int, B: int, rounds: int) -> float:
    return rounds * t * j * (t * j / n) ** B


def run_touch_sim(t: int, j: int, n: int, B: int, rounds: int, trials: int, seed: int = 0,
                  chunk: int = 1 << 22) -> TouchResult:
    """Fraction of trials in which some round puts more than B touches on one bin.

    Each round drops t*j independent uniform touches into n bins.
    """
    if min(t, j, n, B, rounds, trials) < 1:
        raise InvalidConfigError("touch simulation parameters must be positive")
    rng = np.random.default_rng(seed)
    m = t * j
    hits = 0
    per_trial = rounds * m
    batch = max(1, chunk // per_trial)
    done = 0
    while done < trials:
        k = min(batch, trials - done)
        touches = np.sort(rng.integers(0, n, size=(k, rounds, m)), axis=2)
        if m > B:
            # a run of B+1 equal values in a sorted round means oversubscription
            over = (touches[:, :, B:] == touches[:, :, :-B]).any(axis=2)
            hits += int(over.any(axis=1).sum())
        done += k
    return TouchResult(t, j, n, B, rounds, trials, hits / trials, touch_bound(t, j, n, B, rounds), seed)


# -- output ---------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def rows_to_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_csv(rows: Sequence[MetricsRow], path) -> Path:
    if not rows:
        raise ValueError("no rows to write")
    path = Path(path)
    try:
        path.write_text(rows_to_csv(rows), encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc
    return path


TOUCH_COLUMNS = ("t", "j", "n", "B", "rounds", "trials", "frequency", "bound", "seed")


def touch_to_csv(results: Sequence[TouchResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TOUCH_COLUMNS)
    for r in results:
        w.writerow([_fmt(getattr(r, c)) if c not in ("frequency", "bound") else f"{getattr(r, c):.6g}"
                    for c in TOUCH_COLUMNS])
    return buf.getvalue()

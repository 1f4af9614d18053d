"""Acceptance criteria, one test each.

Every test prints one ``PASS``/``FAIL criterion N`` line with the measured
values, then asserts.  Runtime budgets are part of the verdict where a
criterion states one.  Run with ``pytest tests/test_acceptance.py -v``.
"""

import math
import random
import sys
import time

import numpy as np
import pytest

from cuckookick.bench import (
    Experiment,
    ExperimentConfig,
    chain_spawn_samples,
    dary_constants,
    fill_trial,
    kickouts_per_bin,
    rows_to_csv,
    run_chain_length,
    run_dary_fill,
    run_serial_fill,
    run_touch_sim,
    run_txn_aborts,
    touch_bound,
)
from cuckookick.core import Policy
from cuckookick.search import SearchExhausted, plan_bfs
from cuckookick.txn import TxnEngine, preset
from cuckookick.workload import DELETE_HEAVY, DELETE_LIGHT, WorkloadSpec, check_serializability, run_workload

from oracles import chain_exists, min_evictions, snapshot
from test_search import random_instance

pytestmark = pytest.mark.slow

N = 1 << 10
TOP = 0.975


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def at(rows, density, policy, ghosts=False):
    (r,) = [r for r in rows if r.policy == policy and r.ghosts == ghosts and r.density == density]
    return r


# 1 ---------------------------------------------------------------------------

def test_01_ghost_chains_end_in_duplicate_bins(capsys):
    chains = bad = truncated = 0
    with Timer() as tm:
        for policy in (Policy.SORTED_SEARCH, Policy.RANDOM_KICK):
            for trial in range(50):
                had_dup = [False] * N  # duplicate map before the next insert

                def observe(d, out, table):
                    nonlocal chains, bad, truncated, had_dup
                    if not out.success:
                        truncated += 1  # walk cut off by the step cap: it never terminated
                    elif out.metrics.chain_length > 0:
                        chains += 1
                        bad += not had_dup[out.final_bin]
                    had_dup = [b.ndup > 0 for b in table.bins]

                fill_trial(policy, True, N, 4, 2, TOP, 0, trial, observe=observe)
    ok = chains > 0 and bad == 0 and tm.seconds <= 60
    verdict(capsys, 1, ok, f"{chains} chains in 100 ghost fills (sorted, random) to {TOP:.1%}; "
                           f"{bad} ended in a bin with no prior duplicate ({truncated} walks hit the step cap "
                           f"and did not terminate); {tm.seconds:.0f}s (limit 60s)")


# 2 ---------------------------------------------------------------------------

def test_02_bfs_matches_brute_force(capsys):
    rng = random.Random(2024)
    mismatches = []
    depths = []
    with Timer() as tm:
        for i in range(10_000):
            n = rng.randint(4, 64)
            B, H = rng.choice([(2, 2), (1, 3)])
            table, key = random_instance(rng, n, B, H, int(rng.uniform(0.7, 1.0) * n * B))
            snap = snapshot(table)
            want = min_evictions(snap, key.hashes, n * B) if chain_exists(snap, key.hashes) else None
            try:
                got = len(plan_bfs(table, key, max_spawns=10**9)[0])
            except SearchExhausted:
                got = None
            if got != want:
                mismatches.append((i, got, want))
            depths.append(want)
    deep = sum(1 for d in depths if d is not None and d >= 3)
    ok = not mismatches and tm.seconds <= 120
    verdict(capsys, 2, ok, f"{len(mismatches)} mismatches in 10^4 instances "
                           f"({deep} needing >= 3 evictions); {tm.seconds:.0f}s (limit 120s)")


# 3 and 4 share one sweep -----------------------------------------------------

@pytest.fixture(scope="module")
def sweep_975():
    grid = [0.5, 0.9, 0.95, TOP]
    start = time.perf_counter()
    rows = []
    for policies, ghosts in (([Policy.RANDOM_KICK, Policy.BFS, Policy.HYBRID, Policy.SORTED_SEARCH], False),
                             ([Policy.SORTED_SEARCH, Policy.HYBRID], True)):
        cfg = ExperimentConfig(Experiment.SERIAL_FILL, bins=N, bin_size=4, hashes=2, policies=policies,
                               ghosts=ghosts, trials=50, densities=grid, seed=0)
        rows += run_serial_fill(cfg)
    return rows, time.perf_counter() - start


def test_03_random_vs_sorted_ghost_ratio(capsys, sweep_975):
    rows, seconds = sweep_975
    rnd = at(rows, TOP, "random").bins_viewed_mean
    sg = at(rows, TOP, "sorted", True).bins_viewed_mean
    ratio = rnd / sg
    ok = ratio >= 5 and seconds <= 300
    verdict(capsys, 3, ok, f"bins viewed at {TOP:.1%}: random {rnd:.1f}, sorted+ghosts {sg:.1f}, "
                           f"ratio {ratio:.2f} (need >= 5); sweep {seconds:.0f}s (limit 300s)")


def test_04_policy_ordering(capsys, sweep_975):
    rows, _ = sweep_975
    v = {name: at(rows, TOP, p, g).bins_viewed_mean
         for name, p, g in (("sorted+ghosts", "sorted", True), ("sorted", "sorted", False),
                            ("hybrid", "hybrid", False), ("bfs", "bfs", False), ("random", "random", False))}
    chain = v["sorted+ghosts"] <= v["hybrid"] <= v["bfs"] <= v["random"]
    between = v["sorted"] <= v["hybrid"] <= v["bfs"]
    shown = ", ".join(f"{k} {x:.1f}" for k, x in v.items())
    verdict(capsys, 4, chain and between, f"{shown}")


# 5 ---------------------------------------------------------------------------

def test_05_random_kick_kickouts_per_bin(capsys):
    value = kickouts_per_bin(N, 4, 0.97, trials=50, seed=0)
    ok = abs(value - 2.07) <= 0.15 * 2.07
    verdict(capsys, 5, ok, f"kick-outs per bin filling to 97%: {value:.2f} (need 2.07 +/- 15%)")


# 6 ---------------------------------------------------------------------------

def test_06_dary_constants_and_ratios(capsys):
    visited, used = dary_constants(N, 4, 0.95, trials=50, seed=0)
    cfg = ExperimentConfig(Experiment.DARY_FILL, bins=N, bin_size=1, hashes=4, trials=50,
                           policies=[Policy.RANDOM_KICK, Policy.RATTLE, Policy.SORTED_SEARCH, Policy.KHOSLA],
                           densities=[0.5, 0.95, TOP], seed=0)
    rows = run_dary_fill(cfg)
    rnd = at(rows, TOP, "random").bins_viewed_mean
    gains = {p: rnd / at(rows, TOP, p).bins_viewed_mean for p in ("rattle", "sorted", "khosla")}
    c1 = abs(visited - 5.6) <= 0.15 * 5.6
    c2 = abs(used - 3.3) <= 0.10 * 3.3
    c3 = all(g >= 2 for g in gains.values())
    shown = ", ".join(f"{p} {g:.2f}x" for p, g in gains.items())
    verdict(capsys, 6, c1 and c2 and c3,
            f"random visited/record {visited:.2f} (5.6 +/- 15%: {'ok' if c1 else 'off'}); "
            f"rattle hashes used {used:.2f} (3.3 +/- 10%: {'ok' if c2 else 'off'}); "
            f"gain over random at {TOP:.1%}: {shown} (need >= 2x each)")


# 7 ---------------------------------------------------------------------------

def test_07_rattle_chains_near_ideal(capsys):
    grid = [0.5, 0.7, 0.85]
    cfg = ExperimentConfig(Experiment.DARY_FILL, bins=N, bin_size=1, hashes=4, trials=50,
                           policies=[Policy.RATTLE], densities=grid, seed=0)
    rows = run_dary_fill(cfg)
    parts = []
    ok = True
    for r in rows:
        limit = 1.5 / (1 - r.density)
        ok &= r.chain_len_mean <= limit
        parts.append(f"{r.density}: {r.chain_len_mean:.2f} <= {limit:.2f}")
    verdict(capsys, 7, ok, "rattle mean chain length " + "; ".join(parts))


# 8 ---------------------------------------------------------------------------

def _ratios(samples):
    return np.array([c / math.log2(s + 1) for c, s in samples])


def test_08_sorted_chain_length_logarithmic_in_spawns(capsys):
    pilot = _ratios(chain_spawn_samples(N, 4, 0.9, TOP, trials=10, seed=8000))
    C = float(pilot.max())  # fitted once on the pilot seeds, then frozen
    fresh_samples = chain_spawn_samples(N, 4, 0.9, TOP, trials=20, seed=9000)
    fresh = _ratios(fresh_samples)
    p99 = float(np.percentile(fresh, 99))
    ok = p99 <= C
    verdict(capsys, 8, ok, f"C = {C:.2f} from {len(pilot)} pilot searches; fresh 99th percentile of "
                           f"chain/log2(spawns+1) = {p99:.2f} over {len(fresh)} searches at density >= 0.9")


# 9 ---------------------------------------------------------------------------

def test_09_serializability_preset6(capsys):
    runs = violations = 0
    leaks = 0
    commits = []
    old = sys.getswitchinterval()
    sys.setswitchinterval(1e-5)
    try:
        for ratios in (DELETE_LIGHT, DELETE_HEAVY):
            for run in range(20):
                mode = "threads" if run % 2 else "interleaved"
                eng = TxnEngine(N, 8, preset(6), seed=run, log_commits=True)
                stats = run_workload(eng, WorkloadSpec(ratios, 20, 4, 0.95, max_commits=1000),
                                     seed=run, mode=mode)
                report = check_serializability(eng)
                violations += len(report.violations)
                leaks += sum(eng.audit())
                commits.append(stats.commits)
                runs += 1
    finally:
        sys.setswitchinterval(old)
    ok = violations == 0 and leaks == 0 and min(commits) >= 1000
    verdict(capsys, 9, ok, f"{runs} runs (both workloads, threads and interleaved), "
                           f"{min(commits)}-{max(commits)} commits each: {violations} violations, "
                           f"{leaks} leaked locks/claims")


# 10 --------------------------------------------------------------------------

def _ratio(num, den):
    if den == 0:
        return math.inf if num > 0 else float("nan")
    return num / den


def test_10_abort_reductions(capsys):
    grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95]
    base = dict(bins=1 << 11, bin_size=8, threads=8, ops_per_txn=100, trials=20, densities=grid, seed=0)
    with Timer() as tm:
        light = run_txn_aborts(ExperimentConfig(Experiment.TXN_ABORTS, ratios=DELETE_LIGHT, presets=[2, 3], **base))
        heavy = run_txn_aborts(ExperimentConfig(Experiment.TXN_ABORTS, ratios=DELETE_HEAVY,
                                                presets=[1, 2, 5, 6], **base))

    def aborts(rows, p, d):
        return at(rows, d, f"preset{p}").aborts

    checks = [
        ("light p2/p3 @0.6", aborts(light, 2, 0.6), aborts(light, 3, 0.6), 10),
        ("light p2/p3 @0.95", aborts(light, 2, 0.95), aborts(light, 3, 0.95), 4),
        ("heavy p2/p5 @0.6", aborts(heavy, 2, 0.6), aborts(heavy, 5, 0.6), 10),
        ("heavy p2/p5 @0.95", aborts(heavy, 2, 0.95), aborts(heavy, 5, 0.95), 4),
        ("heavy p1/p6 @0.6", aborts(heavy, 1, 0.6), aborts(heavy, 6, 0.6), 50),
    ]
    ok = tm.seconds <= 900
    parts = []
    for name, num, den, need in checks:
        r = _ratio(num, den)
        ok &= r >= need
        parts.append(f"{name} = {num:.1f}/{den:.1f} = {r:.1f} (need >= {need})")
    verdict(capsys, 10, ok, "; ".join(parts) + f"; {tm.seconds:.0f}s (limit 900s)")


# 11 --------------------------------------------------------------------------

TOUCH_GRID = [  # (t, j, n, B, rounds, trials)
    (2, 2, 64, 2, 10, 20_000),
    (4, 2, 256, 2, 10, 20_000),
    (4, 2, 1024, 2, 10, 20_000),
    (8, 2, 1024, 2, 10, 20_000),
    (15, 2, 1 << 14, 8, 1000, 200),
]


def test_11_touch_bound(capsys):
    parts = []
    ok = True
    for k, (t, j, n, B, rounds, trials) in enumerate(TOUCH_GRID):
        res = run_touch_sim(t, j, n, B, rounds, trials, seed=k)
        ok &= res.frequency <= res.bound
        parts.append(f"t={t} n={n} B={B}: {res.frequency:.4g} <= {res.bound:.4g}")
    exact = run_touch_sim(2, 1, 2, 1, 1, 40_000, seed=99)
    sigma = math.sqrt(0.25 / exact.trials)
    exact_ok = abs(exact.frequency - 0.5) <= 3 * sigma
    assert touch_bound(2, 1, 2, 1, 1) == exact.bound
    verdict(capsys, 11, ok and exact_ok,
            "; ".join(parts) + f"; exact case {exact.frequency:.4f} vs 0.5 (3 sigma = {3 * sigma:.4f})")


# 12 --------------------------------------------------------------------------

def test_12_serial_experiments_are_deterministic(capsys):
    cases = [
        (run_serial_fill, ExperimentConfig(Experiment.SERIAL_FILL, bins=256, trials=5, seed=3,
                                           densities=[0.5, 0.9, TOP],
                                           policies=[Policy.RANDOM_KICK, Policy.QUEUE_KICK, Policy.HYBRID])),
        (run_dary_fill, ExperimentConfig(Experiment.DARY_FILL, bins=256, bin_size=1, hashes=4, trials=5, seed=3,
                                         densities=[0.5, 0.9, TOP],
                                         policies=[Policy.RANDOM_KICK, Policy.RATTLE, Policy.KHOSLA,
                                                   Policy.BFS, Policy.SORTED_SEARCH])),
        (run_chain_length, ExperimentConfig(Experiment.CHAIN_LENGTH, bins=256, trials=5, seed=3,
                                            densities=[0.5, 0.9, TOP], ghosts=True,
                                            policies=[Policy.RANDOM_KICK, Policy.BFS, Policy.SORTED_SEARCH])),
    ]
    same = []
    for runner, cfg in cases:
        same.append(rows_to_csv(runner(cfg)).encode() == rows_to_csv(runner(cfg)).encode())
    verdict(capsys, 12, all(same), f"byte-identical reruns: serial-fill {same[0]}, dary-fill {same[1]}, "
                                   f"chain-length {same[2]}")

"""Concurrent workloads over the transactional table, plus correctness oracles.

Workers are generators that yield after planning each operation, so the
same worker code runs two ways:

* ``interleaved``: a seeded scheduler steps one worker at a time, picking
  the next worker at random.  Stage 2 and 3 of a transaction run inside a
  single step.  Runs are deterministic, and contention resembles truly
  parallel threads far more closely than GIL-scheduled threads do.
* ``threads``: one OS thread per worker; used to exercise the locks.
"""

from __future__ import annotations

import random
import threading
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .core import InvalidConfigError, KeyEntry
from .txn import AbortCause, ThreadState, TxnAborted, TxnEngine

MAX_ATTEMPTS = 1000
OP_KINDS = ("insert", "delete", "overwrite", "read")


@dataclass(frozen=True)
class WorkloadSpec:
    ratios: tuple[int, int, int, int] = (1, 0, 1, 1)  # insert:delete:overwrite:read
    ops_per_txn: int = 100
    threads: int = 8
    target_density: float = 0.95
    max_commits: Optional[int] = None  # stop starting transactions after this many commits

    def validate(self) -> None:
        if len(self.ratios) != 4 or any(r < 0 for r in self.ratios) or not any(self.ratios):
            raise InvalidConfigError(f"bad ratios {self.ratios}")
        if self.ratios[0] == 0:
            raise InvalidConfigError("a workload without inserts never fills the table")
        if self.ops_per_txn < 1:
            raise InvalidConfigError("ops_per_txn must be >= 1")
        if self.threads < 1:
            raise InvalidConfigError("threads must be >= 1")
        if not 0 < self.target_density < 1:
            raise InvalidConfigError("target_density must be in (0, 1)")
        if self.max_commits is not None and self.max_commits < 1:
            raise InvalidConfigError("max_commits must be >= 1")


DELETE_LIGHT = (1, 0, 1, 1)
DELETE_HEAVY = (2, 1, 2, 2)


def parse_ratios(text: str) -> tuple[int, int, int, int]:
    parts = text.split(":")
    if len(parts) != 4:
        raise InvalidConfigError(f"ratios must look like i:d:o:r, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


@dataclass
class AbortStats:
    aborts: list[tuple[float, AbortCause]] = field(default_factory=list)
    commits: int = 0
    dropped: int = 0  # transactions abandoned after MAX_ATTEMPTS

    @property
    def total(self) -> int:
        return len(self.aborts)

    def by_cause(self) -> Counter:
        return Counter(c for _, c in self.aborts)

    def cumulative(self, densities: list[float]) -> list[int]:
        """Aborts that happened before the table reached each density."""
        marks = sorted(d for d, _ in self.aborts)
        return [bisect_left(marks, x) for x in densities]


def _make_ops(rng: random.Random, spec: WorkloadSpec, mine: list[KeyEntry],
              fresh) -> list[tuple[str, KeyEntry, int]]:
    ops = []
    for _ in range(spec.ops_per_txn):
        kind = rng.choices(OP_KINDS, weights=spec.ratios)[0]
        if kind != "insert" and not mine:
            kind = "insert"
        if kind == "insert":
            ops.append((kind, fresh(), 0))
        else:
            ops.append((kind, rng.choice(mine), rng.getrandbits(32)))
    return ops


def _worker(engine: TxnEngine, spec: WorkloadSpec, index: int, rng: random.Random,
            stats: AbortStats, lock: threading.Lock) -> Iterator[None]:
    thread = ThreadState()
    mine: list[KeyEntry] = []  # every record this worker ever inserted
    counter = 0
    n = engine.n

    def fresh() -> KeyEntry:
        nonlocal counter
        key = counter * spec.threads + index
        counter += 1
        return KeyEntry(key, rng.getrandbits(32), tuple(rng.sample(range(n), 2)))

    budget = spec.max_commits
    while engine.density < spec.target_density and (budget is None or stats.commits < budget):
        ops = _make_ops(rng, spec, mine, fresh)
        for _attempt in range(MAX_ATTEMPTS):
            txn = engine.begin(thread)
            try:
                for kind, key, payload in ops:
                    if kind == "insert":
                        txn.insert(key)
                    elif kind == "delete":
                        txn.delete(key)
                    elif kind == "overwrite":
                        txn.overwrite(key, payload)
                    else:
                        txn.read(key)
                    yield
                txn.run()
            except TxnAborted as exc:
                with lock:
                    stats.aborts.append((engine.density, exc.cause))
                yield
                continue
            with lock:
                stats.commits += 1
            mine.extend(key for kind, key, _ in ops if kind == "insert")
            break
        else:
            with lock:
                stats.dropped += 1


def run_workload(engine: TxnEngine, spec: WorkloadSpec, seed: int = 0,
                 mode: str = "interleaved") -> AbortStats:
    """Fill ``engine`` to the target density with ``spec.threads`` workers."""
    spec.validate()
    stats = AbortStats()
    lock = threading.Lock()
    workers = [
        _worker(engine, spec, i, random.Random(f"{seed}:worker:{i}"), stats, lock)
        for i in range(spec.threads)
    ]
    if mode == "interleaved":
        sched = random.Random(f"{seed}:schedule")
        active = list(workers)
        while active:
            w = active[sched.randrange(len(active))]
            try:
                next(w)
            except StopIteration:
                active.remove(w)
    elif mode == "threads":
        errors: list[BaseException] = []

        def drive(gen: Iterator[None]) -> None:
            try:
                for _ in gen:
                    pass
            except BaseException as exc:  # surfaced below
                errors.append(exc)

        ts = [threading.Thread(target=drive, args=(w,)) for w in workers]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        if errors:
            raise errors[0]
    else:
        raise InvalidConfigError(f"unknown mode {mode!r}")
    return stats


# -- oracles -----------------------------------------------------------------

@dataclass
class SerializabilityReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_serializability(engine: TxnEngine) -> SerializabilityReport:
    """Replay the commit log in transaction-ID order and compare with the table.

    Checks, over every committed (micro-)transaction:
    * writes to one cell carry strictly increasing, distinct IDs;
    * replaying slot writes in ID order rebuilds the final slot contents;
    * replaying logical effects in ID order rebuilds the key -> payload map;
    * no transaction observed a version newer than its own ID.
    """
    report = SerializabilityReport()
    log = sorted(engine.commit_log, key=lambda r: (r.txn_id, r.seq))
    last_writer: dict[int, int] = {}
    slots: dict[int, Optional[KeyEntry]] = {}
    logical: dict[int, int] = {}
    for rec in log:
        for c in list(rec.slot_writes) + rec.bin_writes:
            prev = last_writer.get(c)
            if prev is not None and prev >= rec.txn_id:
                report.violations.append(f"cell {c}: id {rec.txn_id} follows {prev}")
            last_writer[c] = rec.txn_id
        for c, v in rec.reads.items():
            if v >= rec.txn_id:
                report.violations.append(f"txn {rec.txn_id} read version {v} of cell {c}")
        slots.update(rec.slot_writes)
        for op in rec.ops:
            if op[0] == "del":
                logical.pop(op[1], None)
            else:
                logical[op[1]] = op[2]
    for c in range(engine.n, len(engine.entries)):
        want = slots.get(c)
        got = engine.entries[c]
        if want is not got:
            report.violations.append(f"slot {c}: replay {_show(want)} table {_show(got)}")
        if engine.version[c] != last_writer.get(c, 0):
            report.violations.append(f"slot {c}: version {engine.version[c]} != last writer")
    actual = engine.contents()
    if actual != logical:
        missing = set(logical) ^ set(actual)
        differ = [k for k in set(logical) & set(actual) if logical[k] != actual[k]]
        report.violations.append(f"logical replay mismatch: {len(missing)} keys differ in presence, "
                                 f"{len(differ)} in payload")
    return report


def _show(e: Optional[KeyEntry]) -> str:
    return "empty" if e is None else f"key {e.key}"


def replay_serially(engine_factory, ops_by_txn: list[list[tuple[str, KeyEntry, int]]]) -> dict[int, int]:
    """Run transactions one at a time on a fresh engine; the final key -> payload map."""
    eng = engine_factory()
    thread = ThreadState()
    for ops in ops_by_txn:
        txn = eng.begin(thread)
        for kind, key, payload in ops:
            getattr(txn, kind)(*((key,) if kind in ("insert", "delete", "read") else (key, payload)))
        txn.run()
    return eng.contents()

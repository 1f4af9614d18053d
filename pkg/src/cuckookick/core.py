"""Table geometry, slot/bin state and the non-evicting operations.

A table is ``num_bins`` bins of ``bin_size`` slots.  Every key carries the
list of bins it hashes to; a stored key always lives in one of those bins
(or, with ghost insertions, in two of them at once as a duplicate pair).
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, Optional, Sequence

COUNTER_MASK = 0xFF  # hit counters wrap at 8 bits
SPAWN_CAP = 0xFF  # spawn counts saturate at 8 bits


class InvalidConfigError(ValueError):
    """Raised when a TableConfig violates its invariants."""


class CorruptStateError(RuntimeError):
    """Raised when an internal table invariant is found broken."""


class Policy(str, Enum):
    RANDOM_KICK = "random"
    QUEUE_KICK = "queue"
    BFS = "bfs"
    SORTED_SEARCH = "sorted"
    HYBRID = "hybrid"
    RATTLE = "rattle"
    KHOSLA = "khosla"

    @property
    def is_search(self) -> bool:
        return self in (Policy.BFS, Policy.SORTED_SEARCH, Policy.HYBRID)

    @property
    def is_dary_only(self) -> bool:
        return self in (Policy.RATTLE, Policy.KHOSLA)


@dataclass(frozen=True)
class TableConfig:
    num_bins: int
    bin_size: int = 4
    num_hashes: int = 2
    policy: Policy = Policy.RANDOM_KICK
    ghost_enabled: bool = False
    rng_seed: int = 0

    def validate(self) -> None:
        if self.num_bins < 2:
            raise InvalidConfigError(f"num_bins must be >= 2, got {self.num_bins}")
        if self.bin_size < 1:
            raise InvalidConfigError(f"bin_size must be >= 1, got {self.bin_size}")
        if self.num_hashes < 2:
            raise InvalidConfigError(f"num_hashes must be >= 2, got {self.num_hashes}")
        if self.num_hashes > self.num_bins:
            raise InvalidConfigError("num_hashes cannot exceed num_bins (hashes must be distinct)")
        policy = Policy(self.policy)
        if policy.is_dary_only and self.bin_size != 1:
            raise InvalidConfigError(f"{policy.value} requires bin_size == 1")
        if self.ghost_enabled and self.num_hashes != 2:
            raise InvalidConfigError("ghost insertions require num_hashes == 2")
        if policy.is_search and self.bin_size * (self.num_hashes - 1) <= 1:
            # the frontier would shrink with every spawn
            raise InvalidConfigError("search policies require bin_size * (num_hashes - 1) > 1")

    @property
    def capacity(self) -> int:
        return self.num_bins * self.bin_size


@dataclass(slots=True, eq=False)
class KeyEntry:
    """A record: opaque key, payload, its precomputed bins and rattle counter."""

    key: int
    payload: int
    hashes: tuple[int, ...]
    rattle_counter: int = 0

    def other_bins(self, bin_index: int) -> list[int]:
        return [h for h in self.hashes if h != bin_index]


@dataclass(frozen=True)
class Slot:
    """Read-only snapshot of one slot."""

    occupied: bool
    entry: Optional[KeyEntry]
    is_duplicate: bool
    claim: bool = False
    version_id: int = 0


class Bin:
    __slots__ = (
        "entries",
        "dup",
        "count",
        "ndup",
        "hit_counter",
        "spawn_count",
        "bin_version_id",
        "khosla_label",
    )

    def __init__(self, bin_size: int) -> None:
        self.entries: list[Optional[KeyEntry]] = [None] * bin_size
        self.dup: list[bool] = [False] * bin_size
        self.count = 0
        self.ndup = 0
        self.hit_counter = 0
        self.spawn_count = 0
        self.bin_version_id = 0
        self.khosla_label = 0

    def free_slot(self) -> Optional[int]:
        for i, e in enumerate(self.entries):
            if e is None:
                return i
        return None

    def dup_slot(self) -> Optional[int]:
        if not self.ndup:
            return None
        return self.dup.index(True)

    def find(self, key: int) -> Optional[int]:
        for i, e in enumerate(self.entries):
            if e is not None and e.key == key:
                return i
        return None


@dataclass
class OpMetrics:
    bins_viewed: int = 0
    chain_length: int = 0
    spawns: int = 0


class Table:
    """The bins x slots store shared by every eviction policy.

    ``fetch`` is the single instrumented entry point for reading a bin;
    ``bin_fetches`` counts every call and is how policies measure the
    bins they view.
    """

    def __init__(self, config: TableConfig) -> None:
        config.validate()
        self.config = config
        self.n = config.num_bins
        self.B = config.bin_size
        self.H = config.num_hashes
        self.policy = Policy(config.policy)
        self.ghosts = config.ghost_enabled
        self.bins = [Bin(self.B) for _ in range(self.n)]
        self.rng = random.Random(config.rng_seed)
        self.bin_fetches = 0
        self.num_records = 0
        self.total_kickouts = 0
        self.visits: dict[int, int] = {}

    # -- instrumentation ------------------------------------------------
    def fetch(self, b: int) -> Bin:
        self.bin_fetches += 1
        return self.bins[b]

    @property
    def capacity(self) -> int:
        return self.n * self.B

    @property
    def density(self) -> float:
        """Stored records over total slots; a duplicate pair counts once."""
        return self.num_records / (self.n * self.B)

    def slot(self, b: int, s: int) -> Slot:
        bin_ = self.bins[b]
        e = bin_.entries[s]
        return Slot(e is not None, e, bin_.dup[s])

    def iter_entries(self) -> Iterator[tuple[int, int, KeyEntry, bool]]:
        for b, bin_ in enumerate(self.bins):
            for s, e in enumerate(bin_.entries):
                if e is not None:
                    yield b, s, e, bin_.dup[s]

    # -- raw slot mutation (no metric accounting) -----------------------
    def _place(self, b: int, s: int, entry: KeyEntry, duplicate: bool = False) -> None:
        bin_ = self.bins[b]
        if bin_.entries[s] is not None:
            raise CorruptStateError(f"slot ({b}, {s}) already occupied")
        bin_.entries[s] = entry
        bin_.count += 1
        if duplicate:
            bin_.dup[s] = True
            bin_.ndup += 1

    def _clear(self, b: int, s: int) -> KeyEntry:
        bin_ = self.bins[b]
        e = bin_.entries[s]
        if e is None:
            raise CorruptStateError(f"slot ({b}, {s}) already empty")
        bin_.entries[s] = None
        bin_.count -= 1
        if bin_.dup[s]:
            bin_.dup[s] = False
            bin_.ndup -= 1
        return e

    def _twin_location(self, b: int, s: int) -> tuple[int, int]:
        e = self.bins[b].entries[s]
        for other in e.other_bins(b):
            t = self.bins[other].find(e.key)
            if t is not None and self.bins[other].dup[t]:
                return other, t
        raise CorruptStateError(f"duplicate at ({b}, {s}) has no twin")

    def _drop_duplicate(self, b: int, s: int) -> None:
        """Remove the duplicate copy at (b, s) and promote its twin."""
        if not self.bins[b].dup[s]:
            raise CorruptStateError(f"slot ({b}, {s}) is not a duplicate")
        tb, ts = self._twin_location(b, s)
        self._clear(b, s)
        twin = self.bins[tb]
        twin.dup[ts] = False
        twin.ndup -= 1


def make_table(config: TableConfig) -> Table:
    return Table(config)


def lookup(table: Table, key: KeyEntry) -> Optional[int]:
    """Payload of ``key`` or None; scans only the key's hashed bins.

    With duplicates the first copy found (in hash order) answers.
    """
    for b in key.hashes:
        bin_ = table.fetch(b)
        s = bin_.find(key.key)
        if s is not None:
            return bin_.entries[s].payload
    return None


def _locate_all(table: Table, key: KeyEntry) -> list[tuple[int, int]]:
    found = []
    for b in key.hashes:
        bin_ = table.fetch(b)
        s = bin_.find(key.key)
        if s is not None:
            found.append((b, s))
    return found


def delete(table: Table, key: KeyEntry) -> bool:
    """Remove every copy of ``key``; duplicates are removed as a pair."""
    found = _locate_all(table, key)
    for b, s in found:
        table._clear(b, s)
    if found:
        table.num_records -= 1
    return bool(found)


def overwrite(table: Table, key: KeyEntry, new_payload: int) -> bool:
    found = _locate_all(table, key)
    for b, s in found:
        table.bins[b].entries[s].payload = new_payload
    return bool(found)


# -- key generation ------------------------------------------------------

def random_key(rng: random.Random, key: int, num_bins: int, num_hashes: int,
               payload: Optional[int] = None) -> KeyEntry:
    """Key with uniformly random, pairwise distinct bin indices."""
    hashes = tuple(rng.sample(range(num_bins), num_hashes))
    if payload is None:
        payload = rng.getrandbits(64)
    return KeyEntry(key, payload, hashes)


class KeyHasher:
    """Maps real keys to distinct bins with a family of hash functions.

    Each function is a salted blake2b digest; a collision with an earlier
    function's bin is resolved by rehashing with a bumped attempt counter.
    """

    def __init__(self, num_bins: int, num_hashes: int = 2, seed: int = 0,
                 functions: Optional[Sequence[Callable[[bytes, int], int]]] = None) -> None:
        if num_hashes > num_bins:
            raise InvalidConfigError("cannot draw more distinct bins than exist")
        self.num_bins = num_bins
        self.num_hashes = num_hashes
        if functions is None:
            functions = [self._salted(seed, i) for i in range(num_hashes)]
        if len(functions) != num_hashes:
            raise InvalidConfigError("need exactly one function per hash")
        self.functions = list(functions)

    @staticmethod
    def _salted(seed: int, index: int) -> Callable[[bytes, int], int]:
        salt = f"{seed}:{index}".encode()[:16]

        def fn(data: bytes, attempt: int) -> int:
            h = hashlib.blake2b(data + attempt.to_bytes(4, "little"), digest_size=8, salt=salt)
            return int.from_bytes(h.digest(), "little")

        return fn

    def bins_for(self, key: int) -> tuple[int, ...]:
        data = key.to_bytes(8, "little", signed=key < 0)
        out: list[int] = []
        for fn in self.functions:
            attempt = 0
            b = fn(data, attempt) % self.num_bins
            while b in out:
                attempt += 1
                if attempt > 10_000:
                    raise RuntimeError("hash function cannot produce a distinct bin")
                b = fn(data, attempt) % self.num_bins
            out.append(b)
        return tuple(out)

    def entry(self, key: int, payload: int) -> KeyEntry:
        return KeyEntry(key, payload, self.bins_for(key))


@dataclass
class ResidencyReport:
    misplaced: list[tuple[int, int, int]] = field(default_factory=list)
    bad_duplicates: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.misplaced and not self.bad_duplicates


def check_residency(table: Table) -> ResidencyReport:
    """Full-table scan: every key in one of its bins, copy counts legal."""
    report = ResidencyReport()
    copies: dict[int, list[bool]] = {}
    for b, s, e, is_dup in table.iter_entries():
        if b not in e.hashes:
            report.misplaced.append((b, s, e.key))
        copies.setdefault(e.key, []).append(is_dup)
    for key, flags in copies.items():
        if len(flags) == 1 and not flags[0]:
            continue
        if len(flags) == 2 and all(flags) and table.ghosts:
            continue
        report.bad_duplicates.append(key)
    return report

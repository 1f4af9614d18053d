"""Transactional multi-writer cuckoo table with optimistic concurrency.

Every bin and every slot is a versioned cell with its own lock.  A
transaction plans its operations against a private overlay of pending
writes, collecting the versions it relied on: a read set and a write set.
It then locks its write cells in one global order (all bins, then all
slots), re-checks every recorded version and applies its writes, stamping
each written cell with its transaction ID.

Cell ids: bin ``b`` is cell ``b``; slot ``s`` of bin ``b`` is cell
``n + b * B + s``.

Abort-reduction mechanisms are switched on per engine (see ``PRESETS``):
local retries, queue-kicking through fetch-and-add hit counters, kick-out
chains executed early as system micro-transactions, and claim flags.
"""

from __future__ import annotations

import itertools
import random
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional

from .core import COUNTER_MASK, SPAWN_CAP, InvalidConfigError, KeyEntry
from .search import Classified, KickoutChain, Ordering, SearchExhausted, plan

READ_RETRIES = 100
CHOICE_RETRIES = 3
REPLAN_LIMIT = 3
MAX_WALK_STEPS = 500
MAX_CHAIN_SPAWNS = 2000
STAGE2_RESTARTS = 100
LOCK_WAIT_SECONDS = 10.0


class AbortCause(str, Enum):
    READ_SLOT_CHANGED = "read_slot_changed"
    WRITE_SLOT_CHANGED = "write_slot_changed"
    CLAIM_CONFLICT = "claim_conflict"
    ABSENCE_VIOLATED = "absence_violated"
    BIN_EXHAUSTED = "bin_exhausted"
    BIN_VERSION_CHANGED = "bin_version_changed"
    CHAIN_FAILED = "chain_failed"
    LOCAL_RETRY_EXHAUSTED = "local_retry_exhausted"
    TORN_READ = "torn_read"


# with claims and local retries enabled, aborts must fall in these classes
CLAIM_ERA_CAUSES = frozenset({
    AbortCause.READ_SLOT_CHANGED,
    AbortCause.WRITE_SLOT_CHANGED,
    AbortCause.CLAIM_CONFLICT,
    AbortCause.ABSENCE_VIOLATED,
    AbortCause.BIN_EXHAUSTED,
})


class TxnAborted(Exception):
    def __init__(self, cause: AbortCause, detail: str = "") -> None:
        super().__init__(f"{cause.value}: {detail}" if detail else cause.value)
        self.cause = cause


class TxnStatus(str, Enum):
    PLANNING = "planning"
    VALIDATING = "validating"
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass(frozen=True)
class EngineConfig:
    local_retries: bool = False
    queue_kick: bool = False
    system_kickouts: bool = False
    claims: bool = False
    chain_planner: str = "sorted"  # or "random"

    def validate(self) -> None:
        if self.chain_planner not in ("sorted", "random"):
            raise InvalidConfigError(f"unknown chain planner {self.chain_planner!r}")


PRESETS: dict[int, EngineConfig] = {
    1: EngineConfig(),
    2: EngineConfig(local_retries=True),
    3: EngineConfig(local_retries=True, queue_kick=True),
    4: EngineConfig(local_retries=True, queue_kick=True, system_kickouts=True),
    5: EngineConfig(local_retries=True, claims=True),
    6: EngineConfig(local_retries=True, claims=True, system_kickouts=True),
}


def preset(number: int) -> EngineConfig:
    try:
        return PRESETS[number]
    except KeyError:
        raise InvalidConfigError(f"preset must be 1..6, got {number}") from None


@dataclass
class CommitRecord:
    """What one committed (micro-)transaction wrote, for the oracles."""

    txn_id: int
    seq: int
    slot_writes: dict[int, Optional[KeyEntry]]
    bin_writes: list[int]
    ops: list[tuple]  # ("ins", key, payload) | ("ovw", key, payload) | ("del", key)
    reads: dict[int, int] = field(default_factory=dict)  # cell -> version observed


class ThreadState:
    """Per-thread bookkeeping: the last transaction ID this thread committed."""

    def __init__(self) -> None:
        self.prev_txn_id = 0


class TxnEngine:
    def __init__(self, num_bins: int, bin_size: int, config: EngineConfig = EngineConfig(),
                 seed: int = 0, log_commits: bool = False) -> None:
        if num_bins < 2 or bin_size < 1:
            raise InvalidConfigError("need at least 2 bins of at least 1 slot")
        config.validate()
        self.n = n = num_bins
        self.B = B = bin_size
        self.config = config
        cells = n + n * B
        self.entries: list[Optional[KeyEntry]] = [None] * cells  # bin cells unused
        self.version = [0] * cells
        self.owner: list[Optional[int]] = [None] * cells  # lock holder token
        self.claims = [0] * cells
        self.locks = [threading.Lock() for _ in range(cells)]
        self.hit_counter = [0] * n
        self.spawn_count = [0] * n
        self.num_records = 0
        self.rng = random.Random(seed)
        self.log_commits = log_commits
        self.commit_log: list[CommitRecord] = []
        self._mutex = threading.Lock()  # claims, counters, commit log
        self._tokens = itertools.count(1)
        self._seq = itertools.count(1)

    # -- geometry -------------------------------------------------------
    def cell(self, b: int, s: int) -> int:
        return self.n + b * self.B + s

    def slot_cells(self, b: int) -> range:
        start = self.n + b * self.B
        return range(start, start + self.B)

    def bin_of(self, c: int) -> int:
        return (c - self.n) // self.B

    def is_bin(self, c: int) -> bool:
        return c < self.n

    @property
    def capacity(self) -> int:
        return self.n * self.B

    @property
    def density(self) -> float:
        return self.num_records / (self.n * self.B)

    # -- indivisible primitives -----------------------------------------
    def claim(self, c: int, token: int) -> bool:
        """Test-and-set on a slot's claim flag; True if ``token`` now holds it."""
        with self._mutex:
            holder = self.claims[c]
            if holder == token:
                return True
            if holder:
                return False
            self.claims[c] = token
            return True

    def unclaim(self, c: int, token: int) -> None:
        with self._mutex:
            if self.claims[c] == token:
                self.claims[c] = 0

    def fetch_add_hit(self, b: int) -> int:
        """Fetch-then-add on the bin's hit counter; returns the pre-value."""
        with self._mutex:
            pre = self.hit_counter[b]
            self.hit_counter[b] = (pre + 1) & COUNTER_MASK
            return pre

    def lock(self, c: int, token: int) -> None:
        self.locks[c].acquire()
        self.owner[c] = token

    def unlock(self, c: int) -> None:
        self.owner[c] = None
        self.locks[c].release()

    # -- consistent reads -----------------------------------------------
    def _wait_unlocked(self, c: int, me: Optional[int]) -> None:
        # lock holders are inside a commit critical section; wait them out
        deadline = None
        while self.owner[c] is not None and self.owner[c] != me:
            now = time.monotonic()
            if deadline is None:
                deadline = now + LOCK_WAIT_SECONDS
            elif now > deadline:
                raise TxnAborted(AbortCause.TORN_READ, f"cell {c} stayed locked")
            time.sleep(0)

    def read_slot(self, c: int, me: Optional[int] = None) -> tuple[int, Optional[KeyEntry]]:
        """(version, entry) read so that the version guards the copy.

        Retries while the version moves underneath the copy, up to
        READ_RETRIES times; locks held by ``me`` do not count as busy.
        """
        owner = self.owner
        version = self.version
        for _ in range(READ_RETRIES):
            if owner[c] is not None and owner[c] != me:
                self._wait_unlocked(c, me)
            v = version[c]
            e = self.entries[c]
            if version[c] == v and (owner[c] is None or owner[c] == me):
                return v, e
        raise TxnAborted(AbortCause.TORN_READ, f"cell {c}")

    def scan_bin(self, b: int, me: Optional[int] = None) -> tuple[int, list[tuple[int, int, Optional[KeyEntry]]]]:
        """Bin version plus a consistent (cell, version, entry) listing.

        No key can enter a bin without bumping its version, so an unchanged
        bin version around the scan certifies absences observed in it.
        """
        owner = self.owner
        version = self.version
        entries = self.entries
        for _ in range(READ_RETRIES):
            if owner[b] is not None and owner[b] != me:
                self._wait_unlocked(b, me)
            v = version[b]
            rows = []
            for c in self.slot_cells(b):
                sv = version[c]
                e = entries[c]
                if owner[c] is not None or version[c] != sv:
                    sv, e = self.read_slot(c, me)
                rows.append((c, sv, e))
            if version[b] == v and (owner[b] is None or owner[b] == me):
                return v, rows
        raise TxnAborted(AbortCause.TORN_READ, f"bin {b}")

    # -- inspection -----------------------------------------------------
    def contents(self) -> dict[int, int]:
        """key -> payload over the whole table (quiesced callers only)."""
        out = {}
        for c in range(self.n, len(self.entries)):
            e = self.entries[c]
            if e is not None:
                if e.key in out:
                    raise AssertionError(f"key {e.key} stored twice")
                out[e.key] = e.payload
        return out

    def audit(self) -> tuple[int, int]:
        """(locks held, claims set) across the table; both 0 when quiesced."""
        held = sum(1 for o in self.owner if o is not None)
        claimed = sum(1 for x in self.claims if x)
        return held, claimed

    def begin(self, thread: Optional[ThreadState] = None) -> "Transaction":
        return Transaction(self, thread or ThreadState())

    # -- system kick-outs -----------------------------------------------
    def micro_move(self, src: int, src_ver: int, dst: int, dst_ver: int, entry: KeyEntry) -> int:
        """Move ``entry`` from cell ``src`` to free cell ``dst`` as its own transaction.

        Returns the new version of both slots; raises TxnAborted if either
        slot changed since it was observed.
        """
        tb = self.bin_of(dst)
        token = next(self._tokens)
        cells = [tb] + sorted((src, dst))
        for c in cells:
            self.lock(c, token)
        try:
            if (self.version[src] != src_ver or self.entries[src] is not entry
                    or self.version[dst] != dst_ver or self.entries[dst] is not None):
                raise TxnAborted(AbortCause.WRITE_SLOT_CHANGED, "micro-move target changed")
            tid = max(self.version[tb], src_ver, dst_ver) + 1
            self.entries[dst] = entry
            self.entries[src] = None
            for c in cells:
                self.version[c] = tid
            if self.log_commits:
                rec = CommitRecord(tid, next(self._seq), {src: None, dst: entry}, [tb], [])
                with self._mutex:
                    self.commit_log.append(rec)
            return tid
        finally:
            for c in reversed(cells):
                self.unlock(c)


class TxnView:
    """Search view of the table as one transaction plans to leave it.

    Slots claimed by another transaction are ignored.  For early
    (system) chain execution, slots holding the transaction's own pending
    writes or read-set entries are ignored too, since a micro-transaction
    can only move what is live and must not disturb what was read.
    """

    def __init__(self, txn: "Transaction", live_only: bool) -> None:
        self.txn = txn
        self.engine = txn.engine
        self.live_only = live_only
        self.hit_claim = False  # a foreign claim hid at least one slot

    def classify(self, b: int, fetch: bool = True) -> Classified:
        txn = self.txn
        eng = self.engine
        claims = eng.claims
        terminal = None
        free = 0
        movable = []
        for s, c in enumerate(eng.slot_cells(b)):
            if self.live_only and (c in txn.pending or c in txn.read_set):
                continue
            holder = claims[c]
            if holder and holder != txn.token:
                self.hit_claim = True
                continue
            e = txn.content(c)
            if e is None:
                free += 1
                if terminal is None:
                    terminal = s
            else:
                movable.append((s, e))
        return Classified(terminal, movable, free)

    def spawn_count(self, b: int) -> int:
        return self.engine.spawn_count[b]

    def bump_spawn(self, b: int) -> None:
        sc = self.engine.spawn_count
        if sc[b] < SPAWN_CAP:
            sc[b] += 1


class Transaction:
    def __init__(self, engine: TxnEngine, thread: ThreadState) -> None:
        self.engine = engine
        self.thread = thread
        self.token = next(engine._tokens)
        self.read_set: dict[int, int] = {}
        self.write_set: dict[int, int] = {}
        self.absence: dict[int, set[int]] = {}  # bin -> keys relied on as absent
        self.pending: dict[int, Optional[KeyEntry]] = {}
        self.where: dict[int, Optional[int]] = {}  # key -> planned cell (None: deleted)
        self.claimed: set[int] = set()
        self.seen: dict[int, int] = {}  # latest live version read per cell
        self.ops: list[tuple] = []
        self.records_delta = 0
        self.status = TxnStatus.PLANNING
        self.txn_id: Optional[int] = None
        self.abort_cause: Optional[AbortCause] = None
        self.locked: list[int] = []
        self.local_retries = 0

    # -- planning-state helpers ---------------------------------------------
    def content(self, c: int) -> Optional[KeyEntry]:
        if c in self.pending:
            return self.pending[c]
        v, e = self.engine.read_slot(c)
        self.seen[c] = v
        return e

    def _observe_read(self, c: int, v: int) -> None:
        if c not in self.write_set and c not in self.read_set:
            self.read_set[c] = v

    def _observe_write(self, c: int, v: Optional[int] = None) -> None:
        """Move cell ``c`` into the write set, claiming it when claims are on."""
        eng = self.engine
        if eng.config.claims and not eng.is_bin(c) and c not in self.claimed:
            if not eng.claim(c, self.token):
                raise _ClaimLost(c)
            self.claimed.add(c)
        if c in self.write_set:
            return
        if c in self.read_set:
            self.write_set[c] = self.read_set.pop(c)
        else:
            self.write_set[c] = self.seen[c] if v is None else v

    def _rely_absent(self, b: int, key: int, v: int, write: bool) -> None:
        self.absence.setdefault(b, set()).add(key)
        if write:
            self._observe_write(b, v)
        else:
            self._observe_read(b, v)

    def _locate(self, key: KeyEntry) -> tuple[Optional[int], list[tuple[int, int]]]:
        """Planned location of ``key`` (or None) and the bin versions scanned."""
        if key.key in self.where:
            return self.where[key.key], []
        eng = self.engine
        scanned = []
        for b in key.hashes:
            bv, rows = eng.scan_bin(b)
            for c, sv, e in rows:
                if c in self.pending:
                    continue  # our own planned content supersedes the live copy
                self.seen[c] = sv
                if e is not None and e.key == key.key:
                    return c, scanned
            scanned.append((b, bv))
        return None, scanned

    def _check_planning(self) -> None:
        if self.status is not TxnStatus.PLANNING:
            raise RuntimeError(f"transaction is {self.status.value}, not planning")

    def _guard(self, fn, *args):
        self._check_planning()
        try:
            return fn(*args)
        except TxnAborted as exc:
            self._abort(exc.cause)
            raise

    # -- operations -----------------------------------------------------
    def read(self, key: KeyEntry) -> Optional[int]:
        return self._guard(self._read, key)

    def _read(self, key: KeyEntry) -> Optional[int]:
        c, scanned = self._locate(key)
        if c is None:
            for b, bv in scanned:
                self._rely_absent(b, key.key, bv, write=False)
            return None
        if c not in self.pending:
            self._observe_read(c, self.seen[c])
        return self.content(c).payload

    def delete(self, key: KeyEntry) -> bool:
        return self._guard(self._delete, key)

    def _delete(self, key: KeyEntry) -> bool:
        c = self._edit_target(key)
        if c is None:
            return False
        self.pending[c] = None
        self.where[key.key] = None
        self.ops.append(("del", key.key))
        self.records_delta -= 1
        return True

    def overwrite(self, key: KeyEntry, payload: int) -> bool:
        return self._guard(self._overwrite, key, payload)

    def _overwrite(self, key: KeyEntry, payload: int) -> bool:
        c = self._edit_target(key)
        if c is None:
            return False
        old = self.content(c)
        self.pending[c] = KeyEntry(key.key, payload, old.hashes)
        self.where[key.key] = c
        self.ops.append(("ovw", key.key, payload))
        return True

    def _edit_target(self, key: KeyEntry) -> Optional[int]:
        c, scanned = self._locate(key)
        if c is None:
            for b, bv in scanned:
                self._rely_absent(b, key.key, bv, write=False)
            return None
        if c not in self.pending:
            holder = self.engine.claims[c]
            if holder and holder != self.token:
                raise TxnAborted(AbortCause.CLAIM_CONFLICT, f"slot {c} claimed")
            try:
                self._observe_write(c)
            except _ClaimLost:
                raise TxnAborted(AbortCause.CLAIM_CONFLICT, f"slot {c} claimed") from None
        return c

    def insert(self, entry: KeyEntry) -> bool:
        """Plan the insertion of ``entry``; False if the key is already present."""
        return self._guard(self._insert, entry)

    def _insert(self, entry: KeyEntry) -> bool:
        eng = self.engine
        c, scanned = self._locate(entry)
        if c is not None:
            if c not in self.pending:
                self._observe_read(c, self.seen[c])
            return False
        versions = dict(scanned)
        for attempt in range(CHOICE_RETRIES + 1):
            try:
                target = self._place_new(entry, versions)
                break
            except _ClaimLost:
                self._release_partial()
                if attempt == CHOICE_RETRIES:
                    raise TxnAborted(AbortCause.BIN_EXHAUSTED, "claims kept slipping away") from None
        tb = eng.bin_of(target)
        for b in entry.hashes:
            if b in scanned_bins(scanned):
                self._rely_absent(b, entry.key, versions[b], write=(b == tb))
            elif b == tb:
                # re-insert after our own delete: absence is ours to guarantee
                self._observe_write(b, versions[b])
        self.ops.append(("ins", entry.key, entry.payload))
        self.records_delta += 1
        return True

    def _release_partial(self) -> None:
        # claims taken for cells that never made it into the write set
        for c in list(self.claimed):
            if c not in self.write_set:
                self.engine.unclaim(c, self.token)
                self.claimed.discard(c)

    def _bin_version(self, b: int, versions: dict[int, int]) -> int:
        if b not in versions:
            v, _ = self.engine.scan_bin(b)
            versions[b] = v
        return versions[b]

    def _place_new(self, entry: KeyEntry, versions: dict[int, int]) -> int:
        """Pick and reserve the slot for a new record, planning kick-outs if needed."""
        eng = self.engine
        cfg = eng.config
        view = TxnView(self, live_only=False)
        seeds = [(b, view.classify(b)) for b in entry.hashes]
        for b, _ in seeds:
            self._bin_version(b, versions)
        if all(cls.terminal is None and not cls.movable for _, cls in seeds):
            raise TxnAborted(AbortCause.BIN_EXHAUSTED, "every candidate slot claimed or locked")
        # load balancing: the less full bin, lower hash position on ties
        b, cls = max(seeds, key=lambda bc: bc[1].free)
        if cfg.queue_kick:
            if cls.free == 0:
                b = self._thread_rng().choice(entry.hashes)
            return self._walk(entry, b, queue=True)
        if cls.terminal is not None:
            c = eng.cell(b, cls.terminal)
            self._observe_write(c)
            self.pending[c] = entry
            self.where[entry.key] = c
            return c
        if cfg.chain_planner == "random":
            return self._walk(entry, self._thread_rng().choice(entry.hashes), queue=False)
        return self._chain(entry)

    def _thread_rng(self) -> random.Random:
        return self.engine.rng

    # -- kick-out chains --------------------------------------------------
    def _chain(self, entry: KeyEntry) -> int:
        eng = self.engine
        if eng.config.system_kickouts:
            for _ in range(REPLAN_LIMIT):
                chain = self._plan(entry, live_only=True)
                if chain is None or not chain.moves:
                    break
                root = self._run_system_chain(chain)
                if root is not None:
                    self._observe_write(root, self.seen[root])
                    self.pending[root] = entry
                    self.where[entry.key] = root
                    return root
        chain, view = self._plan_with_view(entry, live_only=False)
        if chain is None:
            if view.hit_claim:
                # the free slots that remain are claimed by others
                raise TxnAborted(AbortCause.BIN_EXHAUSTED, f"no unclaimed chain for key {entry.key}")
            raise TxnAborted(AbortCause.CHAIN_FAILED, f"no chain for key {entry.key}")
        # reserve every touched slot first so a lost claim leaves no half-plan
        for mv in chain.moves:
            self._observe_write(eng.cell(mv.from_bin, mv.from_slot))
        tc = eng.cell(*chain.terminal)
        self._observe_write(tc)
        for mv in chain.moves:
            dst = eng.cell(mv.to_bin, mv.to_slot)
            self._rely_absent(mv.to_bin, mv.entry.key, self._bin_version(mv.to_bin, {}), write=True)
            self.pending[dst] = mv.entry
            self.where[mv.entry.key] = dst
        root = eng.cell(*chain.root)
        self.pending[root] = entry
        self.where[entry.key] = root
        return root

    def _plan(self, entry: KeyEntry, live_only: bool) -> Optional[KickoutChain]:
        return self._plan_with_view(entry, live_only)[0]

    def _plan_with_view(self, entry: KeyEntry, live_only: bool) -> tuple[Optional[KickoutChain], TxnView]:
        view = TxnView(self, live_only)
        try:
            chain, _ = plan(view, entry, Ordering.SPAWN_COUNT, MAX_CHAIN_SPAWNS)
        except SearchExhausted:
            return None, view
        return chain, view

    def _run_system_chain(self, chain: KickoutChain) -> Optional[int]:
        """Execute the chain terminal-first as micro-transactions.

        Returns the freed root cell, or None if a move found the table changed.
        """
        eng = self.engine
        cells = [eng.cell(mv.from_bin, mv.from_slot) for mv in chain.moves]
        tc = eng.cell(*chain.terminal)
        if eng.config.claims:
            for c in cells + [tc]:
                if not eng.claim(c, self.token):
                    self._drop_chain_claims(cells + [tc])
                    return None
                self.claimed.add(c)
        dst, dst_ver = tc, self.seen[tc]
        try:
            for mv, src in zip(reversed(chain.moves), reversed(cells)):
                new = eng.micro_move(src, self.seen[src], dst, dst_ver, mv.entry)
                self.seen[dst] = new
                self.seen[src] = new
                dst, dst_ver = src, new
        except TxnAborted:
            self._drop_chain_claims(cells + [tc])
            return None
        self._drop_chain_claims(cells[1:] + [tc])
        return cells[0]

    def _drop_chain_claims(self, cells: list[int]) -> None:
        for c in cells:
            if c in self.claimed and c not in self.write_set:
                self.engine.unclaim(c, self.token)
                self.claimed.discard(c)

    def _walk(self, entry: KeyEntry, b: int, queue: bool) -> int:
        """Walk-style insertion: place, evict the occupant, send it onward.

        Queue-kicking takes the slot named by the bin's hit counter even if
        another slot is free; the random walk takes a free slot when one
        exists and otherwise a uniformly random victim.
        """
        eng = self.engine
        rng = self._thread_rng()
        path: list[tuple[int, KeyEntry]] = []  # (cell, record placed there)
        scratch: dict[int, Optional[KeyEntry]] = {}
        cur = entry
        for _ in range(MAX_WALK_STEPS):
            cells = [c for c in eng.slot_cells(b)
                     if not (eng.claims[c] and eng.claims[c] != self.token)]
            if not cells:
                raise TxnAborted(AbortCause.BIN_EXHAUSTED, f"bin {b} fully claimed")
            if queue:
                c = eng.cell(b, eng.fetch_add_hit(b) % eng.B)
                if c not in cells:
                    c = cells[0]
            else:
                c = next((x for x in cells if self._peek(x, scratch) is None), None)
                if c is None:
                    c = rng.choice(cells)
            occupant = self._peek(c, scratch)
            scratch[c] = cur
            path.append((c, cur))
            if occupant is None:
                break
            cur = occupant
            others = cur.other_bins(b)
            b = others[0] if len(others) == 1 else rng.choice(others)
        else:
            raise TxnAborted(AbortCause.CHAIN_FAILED, f"walk exceeded {MAX_WALK_STEPS} steps")
        root = path[0][0]
        if eng.config.system_kickouts and len(path) > 1 and self._simple_live_path(path):
            chain_root = self._run_walk_system(path)
            if chain_root is not None:
                self._observe_write(root, self.seen[root])
                self.pending[root] = entry
                self.where[entry.key] = root
                return root
        for c, _ in path:
            self._observe_write(c)
        for c, rec in path:
            self.pending[c] = rec
            self.where[rec.key] = c
            if rec is not entry:
                tb = eng.bin_of(c)
                self._rely_absent(tb, rec.key, self._bin_version(tb, {}), write=True)
        return root

    def _peek(self, c: int, scratch: dict[int, Optional[KeyEntry]]) -> Optional[KeyEntry]:
        if c in scratch:
            return scratch[c]
        return self.content(c)

    def _simple_live_path(self, path: list[tuple[int, KeyEntry]]) -> bool:
        cells = [c for c, _ in path]
        if len(set(cells)) != len(cells):
            return False
        return not any(c in self.pending or c in self.read_set for c in cells)

    def _run_walk_system(self, path: list[tuple[int, KeyEntry]]) -> Optional[int]:
        eng = self.engine
        # record placed at path[i] came from path[i-1]; apply from the far end
        dst = path[-1][0]
        dst_ver = self.seen[dst]
        try:
            for i in range(len(path) - 1, 0, -1):
                src = path[i - 1][0]
                new = eng.micro_move(src, self.seen[src], dst, dst_ver, path[i][1])
                self.seen[dst] = new
                self.seen[src] = new
                dst, dst_ver = src, new
        except TxnAborted:
            return None
        return path[0][0]

    # -- stage 2 and 3 --------------------------------------------------
    def validate_and_lock(self) -> None:
        """Lock the write set in global order and verify every recorded version."""
        self._check_planning()
        self.status = TxnStatus.VALIDATING
        try:
            for _ in range(STAGE2_RESTARTS):
                if self._stage2():
                    return
                self._unlock_all()
                self.local_retries += 1
            raise TxnAborted(AbortCause.LOCAL_RETRY_EXHAUSTED, "read-set bins kept changing")
        except TxnAborted as exc:
            self._abort(exc.cause)
            raise

    def _stage2(self) -> bool:
        """One locking pass; False asks for a restart after releasing locks."""
        eng = self.engine
        retry = eng.config.local_retries
        order = sorted(self.write_set)  # bins (< n) sort before slots
        for c in order:
            eng.lock(c, self.token)
            self.locked.append(c)
            if eng.version[c] == self.write_set[c]:
                continue
            if not eng.is_bin(c):
                raise TxnAborted(AbortCause.WRITE_SLOT_CHANGED, f"slot {c}")
            if not retry:
                raise TxnAborted(AbortCause.BIN_VERSION_CHANGED, f"bin {c}")
            # we hold the bin lock, so nothing can move in while we look
            self._verify_absent(c, locked=True)
            self.write_set[c] = eng.version[c]
            self.local_retries += 1
        self.seq = next(eng._seq)
        for c, v in self.read_set.items():
            held = eng.owner[c]
            if eng.version[c] == v and held is None:
                continue
            if not eng.is_bin(c):
                raise TxnAborted(AbortCause.READ_SLOT_CHANGED, f"slot {c}")
            if not retry:
                raise TxnAborted(AbortCause.BIN_VERSION_CHANGED, f"bin {c}")
            if held is not None:
                return False  # someone is committing into it: back off and redo stage 2
            self.read_set[c] = self._verify_absent(c, locked=False)
            self.local_retries += 1
        return True

    def _verify_absent(self, b: int, locked: bool) -> int:
        eng = self.engine
        keys = self.absence.get(b, ())
        if locked:
            v = eng.version[b]
            rows = [(c, eng.entries[c]) for c in eng.slot_cells(b)]
        else:
            v, scan = eng.scan_bin(b, self.token)
            rows = [(c, e) for c, _, e in scan]
        for c, e in rows:
            if e is not None and e.key in keys and c not in self.write_set:
                raise TxnAborted(AbortCause.ABSENCE_VIOLATED, f"key {e.key} appeared in bin {b}")
        return v

    def commit(self) -> int:
        if self.status is not TxnStatus.VALIDATING:
            raise RuntimeError("commit requires a successful validate_and_lock")
        eng = self.engine
        observed = list(self.read_set.values()) + list(self.write_set.values())
        tid = max(observed, default=0) + 1
        tid = max(tid, self.thread.prev_txn_id + 1)
        for c, e in self.pending.items():
            eng.entries[c] = e
        for c in self.write_set:
            eng.version[c] = tid
        self.txn_id = tid
        self.thread.prev_txn_id = tid
        with eng._mutex:
            eng.num_records += self.records_delta
            if eng.log_commits:
                eng.commit_log.append(CommitRecord(
                    tid, self.seq, dict(self.pending),
                    [c for c in self.write_set if eng.is_bin(c)], list(self.ops),
                    dict(self.read_set)))
        self._unlock_all()
        self._unclaim_all()
        self.status = TxnStatus.COMMITTED
        return tid

    def run(self) -> int:
        """Validate and commit; raises TxnAborted on failure."""
        self.validate_and_lock()
        return self.commit()

    def _unlock_all(self) -> None:
        eng = self.engine
        for c in reversed(self.locked):
            eng.unlock(c)
        self.locked.clear()

    def _unclaim_all(self) -> None:
        for c in self.claimed:
            self.engine.unclaim(c, self.token)
        self.claimed.clear()

    def _abort(self, cause: AbortCause) -> None:
        self._unlock_all()
        self._unclaim_all()
        self.status = TxnStatus.ABORTED
        self.abort_cause = cause


def scanned_bins(scanned: list[tuple[int, int]]) -> set[int]:
    return {b for b, _ in scanned}


class _ClaimLost(Exception):
    def __init__(self, cell: int) -> None:
        super().__init__(f"claim on cell {cell} lost")
        self.cell = cell


# functional aliases
def txn_begin(engine: TxnEngine, thread: Optional[ThreadState] = None) -> Transaction:
    return engine.begin(thread)


def txn_read(txn: Transaction, key: KeyEntry) -> Optional[int]:
    return txn.read(key)


def txn_insert(txn: Transaction, entry: KeyEntry) -> bool:
    return txn.insert(entry)


def txn_delete(txn: Transaction, key: KeyEntry) -> bool:
    return txn.delete(key)


def txn_overwrite(txn: Transaction, key: KeyEntry, payload: int) -> bool:
    return txn.overwrite(key, payload)


def txn_validate_and_lock(txn: Transaction) -> None:
    txn.validate_and_lock()


def txn_commit(txn: Transaction) -> int:
    return txn.commit()


def system_kickout(txn: Transaction, chain: KickoutChain) -> Optional[int]:
    """Run ``chain`` terminal-first as micro-transactions; the freed root cell or None."""
    return txn._run_system_chain(chain)


def iter_cells(engine: TxnEngine) -> Iterator[tuple[int, Optional[KeyEntry]]]:
    for c in range(engine.n, len(engine.entries)):
        yield c, engine.entries[c]

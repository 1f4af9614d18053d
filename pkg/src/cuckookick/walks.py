"""Walk-based insertion: random kicking, queue-kicking, ghost insertions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import (
    COUNTER_MASK,
    CorruptStateError,
    KeyEntry,
    OpMetrics,
    Policy,
    Table,
)

DEFAULT_MAX_STEPS = 500

Step = tuple[int, int, Optional[int]]  # (bin, slot, evicted key or None)


@dataclass
class WalkOutcome:
    metrics: OpMetrics
    success: bool
    steps: list[Step] = field(default_factory=list)
    homeless: Optional[KeyEntry] = None

    @property
    def final_bin(self) -> Optional[int]:
        return self.steps[-1][0] if self.steps else None


def _pick_bin(table: Table, key: KeyEntry, queue: bool) -> int:
    """Bin choice over already-fetched hashed bins (see choose_insert_bin)."""
    bins = table.bins
    best = None
    best_rank = None
    for b in key.hashes:
        bin_ = bins[b]
        if bin_.count < table.B:
            rank = (bin_.count, bin_.hit_counter, b)
            if best_rank is None or rank < best_rank:
                best, best_rank = b, rank
    if best is not None:
        return best
    if table.ghosts:
        for b in key.hashes:
            if bins[b].ndup:
                return b
    if queue:
        return min(key.hashes, key=lambda b: (bins[b].hit_counter, b))
    return table.rng.choice(key.hashes)


def choose_insert_bin(table: Table, key: KeyEntry) -> int:
    """Load balancing, generalised to hit balancing for queue-kicking.

    A bin with free slots beats a full one; among bins with room the less
    full wins, then the smaller hit counter, then the lower index.  When
    every hashed bin is full, queue-kicking takes the smaller hit counter
    and the other policies pick uniformly at random.
    """
    for b in key.hashes:
        table.fetch(b)
    return _pick_bin(table, key, table.policy is Policy.QUEUE_KICK)


def promote_duplicate(table: Table, key: KeyEntry, surviving_bin: int) -> None:
    copies = []
    for b in key.hashes:
        s = table.bins[b].find(key.key)
        if s is not None:
            copies.append((b, s))
    if len(copies) != 2 or not all(table.bins[b].dup[s] for b, s in copies):
        raise CorruptStateError(f"key {key.key} is not stored as a duplicate pair")
    for b, s in copies:
        if b != surviving_bin:
            table._drop_duplicate(b, s)
            return
    raise CorruptStateError(f"key {key.key} has no copy in bin {surviving_bin}")


def _ghost_double(table: Table, key: KeyEntry, queue: bool, outcome: WalkOutcome) -> bool:
    """Store ``key`` in both bins when both have room.  Bins must be fetched."""
    b0, b1 = key.hashes
    bins = table.bins
    if bins[b0].count >= table.B or bins[b1].count >= table.B:
        return False
    for b in (b0, b1):
        bin_ = bins[b]
        s = None
        if queue:
            bin_.hit_counter = (bin_.hit_counter + 1) & COUNTER_MASK
            s = bin_.hit_counter % table.B
            if bin_.entries[s] is not None:
                s = None
        if s is None:
            s = bin_.free_slot()
        table._place(b, s, key, duplicate=True)
        outcome.steps.append((b, s, None))
    return True


def _replace_duplicate(table: Table, b: int, s: int, entry: KeyEntry) -> None:
    table._drop_duplicate(b, s)
    table._place(b, s, entry)


def _begin(table: Table, key: KeyEntry) -> tuple[WalkOutcome, int]:
    outcome = WalkOutcome(OpMetrics(), True)
    start = table.bin_fetches
    for b in key.hashes:
        table.fetch(b)
    return outcome, start


def _finish(table: Table, outcome: WalkOutcome, start: int) -> WalkOutcome:
    outcome.metrics.bins_viewed = table.bin_fetches - start
    if outcome.success:
        table.num_records += 1
    table.total_kickouts += outcome.metrics.chain_length
    return outcome


def insert_random_kick(table: Table, key: KeyEntry, max_steps: int = DEFAULT_MAX_STEPS) -> WalkOutcome:
    """Random-walk insertion; a full bin gives up a uniformly random occupant."""
    outcome, start = _begin(table, key)
    if table.ghosts and _ghost_double(table, key, False, outcome):
        return _finish(table, outcome, start)
    B = table.B
    rng = table.rng
    b = _pick_bin(table, key, False)
    cur = key
    while True:
        bin_ = table.bins[b]
        if bin_.count < B:
            s = bin_.free_slot()
            table._place(b, s, cur)
            outcome.steps.append((b, s, None))
            break
        if table.ghosts and bin_.ndup:
            s = bin_.dup_slot()
            _replace_duplicate(table, b, s, cur)
            outcome.steps.append((b, s, None))
            break
        if outcome.metrics.chain_length >= max_steps:
            outcome.success = False
            outcome.homeless = cur
            break
        s = rng.randrange(B)
        victim = bin_.entries[s]
        bin_.entries[s] = cur
        outcome.steps.append((b, s, victim.key))
        outcome.metrics.chain_length += 1
        cur = victim
        others = victim.other_bins(b)
        b = others[0] if len(others) == 1 else rng.choice(others)
        table.fetch(b)
    return _finish(table, outcome, start)


def insert_queue_kick(table: Table, key: KeyEntry, max_steps: int = DEFAULT_MAX_STEPS) -> WalkOutcome:
    """Queue-kicking through per-bin hit counters, with hit balancing.

    The counter is bumped before placement and the record goes to slot
    ``hit_counter % B``, evicting whatever is there.  Under deletes this
    can evict from a bin that still has free slots.
    """
    outcome, start = _begin(table, key)
    if table.ghosts and _ghost_double(table, key, True, outcome):
        return _finish(table, outcome, start)
    B = table.B
    b = _pick_bin(table, key, True)
    cur = key
    while True:
        bin_ = table.bins[b]
        if table.ghosts and bin_.count == B and bin_.ndup:
            s = bin_.dup_slot()
            _replace_duplicate(table, b, s, cur)
            outcome.steps.append((b, s, None))
            break
        hit = (bin_.hit_counter + 1) & COUNTER_MASK
        bin_.hit_counter = hit
        s = hit % B
        occupant = bin_.entries[s]
        if occupant is None:
            table._place(b, s, cur)
            outcome.steps.append((b, s, None))
            break
        if bin_.dup[s]:
            _replace_duplicate(table, b, s, cur)
            outcome.steps.append((b, s, None))
            break
        if outcome.metrics.chain_length >= max_steps:
            outcome.success = False
            outcome.homeless = cur
            break
        bin_.entries[s] = cur
        outcome.steps.append((b, s, occupant.key))
        outcome.metrics.chain_length += 1
        cur = occupant
        others = occupant.other_bins(b)
        b = others[0] if len(others) == 1 else table.rng.choice(others)
        table.fetch(b)
    return _finish(table, outcome, start)


def ghost_insert(table: Table, key: KeyEntry, max_steps: int = DEFAULT_MAX_STEPS) -> WalkOutcome:
    """Insert with the ghost overlay, delegating evictions to the table's policy."""
    if not table.ghosts:
        raise CorruptStateError("ghost_insert on a table without ghost insertions")
    return insert(table, key, max_steps)


def insert(table: Table, key: KeyEntry, max_steps: Optional[int] = None) -> WalkOutcome:
    """Insert ``key`` (assumed absent) using the table's configured policy."""
    policy = table.policy
    if policy is Policy.RANDOM_KICK:
        if table.B == 1 and table.H > 2:
            from .dary import insert_random_dary
            return insert_random_dary(table, key, max_steps or DEFAULT_MAX_STEPS)
        return insert_random_kick(table, key, max_steps or DEFAULT_MAX_STEPS)
    if policy is Policy.QUEUE_KICK:
        return insert_queue_kick(table, key, max_steps or DEFAULT_MAX_STEPS)
    if policy.is_search:
        from .search import DEFAULT_MAX_SPAWNS, insert_search
        return insert_search(table, key, max_spawns=max_steps or DEFAULT_MAX_SPAWNS)
    from .dary import insert_khosla, insert_rattle
    if policy is Policy.RATTLE:
        return insert_rattle(table, key, max_steps or DEFAULT_MAX_STEPS)
    return insert_khosla(table, key, max_steps or DEFAULT_MAX_STEPS)

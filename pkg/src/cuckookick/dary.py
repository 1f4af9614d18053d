"""d-ary cuckoo hashing: single-slot bins, d hash functions per key.

Three eviction schemes live here: rattle-kicking (each key cycles through
its hash functions in order, and the key with the smaller rattle counter
loses a contest for a bin), Khosla's label-based scheme, and the random
walk baseline.
"""

from __future__ import annotations

from .core import CorruptStateError, KeyEntry, Table
from .walks import DEFAULT_MAX_STEPS, WalkOutcome, _finish
from .core import OpMetrics


def _require_dary(table: Table) -> None:
    if table.B != 1:
        raise CorruptStateError("d-ary insertion needs bin_size == 1")


def insert_rattle(table: Table, key: KeyEntry, max_steps: int = DEFAULT_MAX_STEPS) -> WalkOutcome:
    """Rattle-kicking.

    A key tries bin ``hashes[r % d]``.  If the bin is taken, the key with
    the higher rattle counter keeps it (the incumbent wins ties) and the
    loser's counter is bumped before it tries its next bin.
    """
    _require_dary(table)
    outcome = WalkOutcome(OpMetrics(), True)
    start = table.bin_fetches
    bins = table.bins
    d = table.H
    cur = key
    contests = 0
    while True:
        b = cur.hashes[cur.rattle_counter % d]
        bin_ = table.fetch(b)
        occupant = bin_.entries[0]
        if occupant is None:
            table._place(b, 0, cur)
            outcome.steps.append((b, 0, None))
            break
        if contests >= max_steps:
            outcome.success = False
            outcome.homeless = cur
            break
        contests += 1
        if cur.rattle_counter > occupant.rattle_counter:
            bins[b].entries[0] = cur
            outcome.steps.append((b, 0, occupant.key))
            outcome.metrics.chain_length += 1
            loser = occupant
        else:
            loser = cur
        loser.rattle_counter += 1
        cur = loser
    return _finish(table, outcome, start)


def insert_khosla(table: Table, key: KeyEntry, max_steps: int = DEFAULT_MAX_STEPS) -> WalkOutcome:
    """Label-guided insertion after Khosla.

    Every bin carries a label that only grows.  The first placement reads
    all d candidate bins: an empty one is taken directly, otherwise the
    minimum-label bin (lowest index on ties) is taken, its occupant is
    evicted, and its label becomes that minimum plus one.  Evicted keys
    repeat the choice, reading labels without fetching bins, and fetch
    only the bin they move into.
    """
    _require_dary(table)
    outcome = WalkOutcome(OpMetrics(), True)
    start = table.bin_fetches
    bins = table.bins
    cur = key
    first = True
    while True:
        if first:
            for h in cur.hashes:
                table.fetch(h)
            first = False
            empty = [h for h in cur.hashes if bins[h].entries[0] is None]
            if empty:
                b = min(empty, key=lambda h: (bins[h].khosla_label, h))
                table._place(b, 0, cur)
                outcome.steps.append((b, 0, None))
                break
            b = min(cur.hashes, key=lambda h: (bins[h].khosla_label, h))
        else:
            b = min(cur.hashes, key=lambda h: (bins[h].khosla_label, h))
            table.fetch(b)
        bin_ = bins[b]
        occupant = bin_.entries[0]
        if occupant is None:
            table._place(b, 0, cur)
            outcome.steps.append((b, 0, None))
            break
        if outcome.metrics.chain_length >= max_steps:
            outcome.success = False
            outcome.homeless = cur
            break
        bin_.khosla_label += 1  # chosen label is the minimum, so min + 1
        bin_.entries[0] = cur
        outcome.steps.append((b, 0, occupant.key))
        outcome.metrics.chain_length += 1
        cur = occupant
    return _finish(table, outcome, start)


def insert_random_dary(table: Table, key: KeyEntry, max_steps: int = DEFAULT_MAX_STEPS) -> WalkOutcome:
    """Random walk: try a random hashed bin, displacing any occupant.

    A displaced key never goes straight back to the bin it was evicted from.
    Per-key bin visits are tallied in ``table.visits``.
    """
    _require_dary(table)
    outcome = WalkOutcome(OpMetrics(), True)
    start = table.bin_fetches
    rng = table.rng
    visits = table.visits
    bins = table.bins
    cur = key
    b = rng.choice(key.hashes)
    while True:
        bin_ = table.fetch(b)
        visits[cur.key] = visits.get(cur.key, 0) + 1
        occupant = bin_.entries[0]
        if occupant is None:
            table._place(b, 0, cur)
            outcome.steps.append((b, 0, None))
            break
        if outcome.metrics.chain_length >= max_steps:
            outcome.success = False
            outcome.homeless = cur
            break
        bins[b].entries[0] = cur
        outcome.steps.append((b, 0, occupant.key))
        outcome.metrics.chain_length += 1
        cur = occupant
        b = rng.choice(occupant.other_bins(b))
    return _finish(table, outcome, start)


def mean_hash_functions_used(table: Table) -> float:
    """Average over stored keys of how many hash functions each has tried."""
    d = table.H
    used = [min(d, e.rattle_counter + 1) for _, _, e, _ in table.iter_entries()]
    return sum(used) / len(used) if used else 0.0


def mean_bins_visited(table: Table) -> float:
    """Average over stored keys of bins visited during random-walk insertion."""
    counts = [table.visits.get(e.key, 0) for _, _, e, _ in table.iter_entries()]
    return sum(counts) / len(counts) if counts else 0.0

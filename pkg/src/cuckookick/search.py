"""Search-based chain planning: BFS, sorted search by spawn count, hybrid.

The planners run against a small view protocol (``classify`` a bin into a
terminal slot and movable records, read and bump spawn counts) so that the
same code plans chains on a serial ``Table`` and on the transactional
engine's planning view.
"""

from __future__ import annotations

import heapq
from collections import deque
from enum import Enum
from typing import NamedTuple, Optional, Protocol

from .core import SPAWN_CAP, CorruptStateError, KeyEntry, OpMetrics, Policy, Table
from .walks import WalkOutcome, _begin, _finish, _ghost_double

DEFAULT_MAX_SPAWNS = 2000


class SearchExhausted(RuntimeError):
    def __init__(self, metrics: OpMetrics) -> None:
        super().__init__(f"no kick-out chain found after {metrics.spawns} spawns")
        self.metrics = metrics


class StaleChainError(RuntimeError):
    """The table changed between planning a chain and applying it."""


class Ordering(str, Enum):
    FIFO = "fifo"
    SPAWN_COUNT = "spawn_count"
    DEPTH_THEN_SPAWN_COUNT = "depth_then_spawn_count"


ORDERING_FOR = {
    Policy.BFS: Ordering.FIFO,
    Policy.SORTED_SEARCH: Ordering.SPAWN_COUNT,
    Policy.HYBRID: Ordering.DEPTH_THEN_SPAWN_COUNT,
}


class Classified(NamedTuple):
    terminal: Optional[int]
    movable: list[tuple[int, KeyEntry]]
    free: int
    duplicate: bool = False


class SearchView(Protocol):
    def classify(self, b: int, fetch: bool = True) -> Classified: ...
    def spawn_count(self, b: int) -> int: ...
    def bump_spawn(self, b: int) -> None: ...


class Move(NamedTuple):
    from_bin: int
    from_slot: int
    to_bin: int
    to_slot: int
    entry: KeyEntry


class KickoutChain(NamedTuple):
    moves: list[Move]
    terminal: tuple[int, int]
    terminal_duplicate: bool = False

    @property
    def root(self) -> tuple[int, int]:
        if self.moves:
            return self.moves[0].from_bin, self.moves[0].from_slot
        return self.terminal

    def __len__(self) -> int:
        return len(self.moves)


class Node:
    __slots__ = ("bin", "slot", "entry", "depth", "parent")

    def __init__(self, b: int, s: int, entry: KeyEntry, depth: int, parent: Optional["Node"]) -> None:
        self.bin = b
        self.slot = s
        self.entry = entry
        self.depth = depth
        self.parent = parent


class Frontier:
    """Records viewed but not yet spawned.

    A record's sort key is its bin's spawn count at the moment the record
    is viewed (the bucket it is filed under); later spawns from the same
    bin do not re-file it.  Ties fall back to insertion order.
    """

    def __init__(self, ordering: Ordering, view: SearchView) -> None:
        self.ordering = Ordering(ordering)
        self.view = view
        self._seq = 0
        self._fifo: deque[Node] = deque()
        self._heap: list = []

    def __len__(self) -> int:
        return len(self._fifo) + len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._fifo) or bool(self._heap)

    def push(self, node: Node) -> None:
        self._seq += 1
        if self.ordering is Ordering.FIFO:
            self._fifo.append(node)
        elif self.ordering is Ordering.SPAWN_COUNT:
            heapq.heappush(self._heap, (self.view.spawn_count(node.bin), self._seq, node))
        else:
            heapq.heappush(self._heap, (node.depth, self.view.spawn_count(node.bin), self._seq, node))

    def pop(self) -> Node:
        if self.ordering is Ordering.FIFO:
            return self._fifo.popleft()
        return heapq.heappop(self._heap)[-1]


class SerialView:
    """Search view over a serial table; duplicates count as terminals."""

    def __init__(self, table: Table) -> None:
        self.table = table

    def classify(self, b: int, fetch: bool = True) -> Classified:
        t = self.table
        bin_ = t.fetch(b) if fetch else t.bins[b]
        free = t.B - bin_.count
        if free:
            return Classified(bin_.entries.index(None), [], free)
        if t.ghosts and bin_.ndup:
            return Classified(bin_.dup.index(True), [], 0, True)
        return Classified(None, list(enumerate(bin_.entries)), 0)

    def spawn_count(self, b: int) -> int:
        return self.table.bins[b].spawn_count

    def bump_spawn(self, b: int) -> None:
        bin_ = self.table.bins[b]
        if bin_.spawn_count < SPAWN_CAP:
            bin_.spawn_count += 1


class Spawned(NamedTuple):
    terminal: Optional[tuple[Node, int, int, bool]]
    children: int


def spawn(view: SearchView, frontier: Frontier, candidate: Node, visited: set[int],
          metrics: OpMetrics) -> Spawned:
    """Spawn one record: bump its bin's spawn count and view its children.

    Returns the terminal (parent node, bin, slot) if a child bin can absorb
    the record, else the number of children pushed.
    """
    view.bump_spawn(candidate.bin)
    metrics.spawns += 1
    added = 0
    for c in candidate.entry.hashes:
        if c == candidate.bin or c in visited:
            continue
        visited.add(c)
        metrics.bins_viewed += 1
        cls = view.classify(c)
        if cls.terminal is not None:
            return Spawned((candidate, c, cls.terminal, cls.duplicate), added)
        depth = candidate.depth + 1
        for s, e in cls.movable:
            frontier.push(Node(c, s, e, depth, candidate))
            added += 1
    return Spawned(None, added)


def _build_chain(node: Node, tb: int, ts: int, duplicate: bool) -> KickoutChain:
    path = []
    while node is not None:
        path.append(node)
        node = node.parent
    path.reverse()
    moves = []
    for i, nd in enumerate(path):
        if i + 1 < len(path):
            nxt = path[i + 1]
            moves.append(Move(nd.bin, nd.slot, nxt.bin, nxt.slot, nd.entry))
        else:
            moves.append(Move(nd.bin, nd.slot, tb, ts, nd.entry))
    return KickoutChain(moves, (tb, ts), duplicate)


def plan(view: SearchView, key: KeyEntry, ordering: Ordering, max_spawns: int = DEFAULT_MAX_SPAWNS,
         batch: int = 1, seeds_fetched: bool = False) -> tuple[KickoutChain, OpMetrics]:
    """Plan a kick-out chain for ``key`` under the given frontier ordering.

    Raises SearchExhausted when ``max_spawns`` spawns (or the reachable
    bins) run out without finding a free or duplicate slot.
    """
    metrics = OpMetrics()
    seeds = []
    for b in key.hashes:
        if not seeds_fetched:
            metrics.bins_viewed += 1
        seeds.append((b, view.classify(b, fetch=not seeds_fetched)))
    # trivial chain: most free slots wins, then lower index; duplicates last
    best = None
    for b, cls in seeds:
        if cls.terminal is None:
            continue
        rank = (-cls.free, b)
        if best is None or rank < best[0]:
            best = (rank, b, cls.terminal, cls.duplicate)
    if best is not None:
        _, b, s, dup = best
        return KickoutChain([], (b, s), dup), metrics

    frontier = Frontier(ordering, view)
    visited = set(key.hashes)
    for b, cls in seeds:
        for s, e in cls.movable:
            frontier.push(Node(b, s, e, 1, None))
    while frontier:
        round_ = []
        while frontier and len(round_) < batch:
            round_.append(frontier.pop())
        for node in round_:
            if metrics.spawns >= max_spawns:
                raise SearchExhausted(metrics)
            result = spawn(view, frontier, node, visited, metrics)
            if result.terminal is not None:
                parent, tb, ts, dup = result.terminal
                chain = _build_chain(parent, tb, ts, dup)
                metrics.chain_length = len(chain.moves)
                return chain, metrics
    raise SearchExhausted(metrics)


def plan_bfs(table: Table, key: KeyEntry, max_spawns: int = DEFAULT_MAX_SPAWNS) -> tuple[KickoutChain, OpMetrics]:
    return plan(SerialView(table), key, Ordering.FIFO, max_spawns)


def plan_sorted(table: Table, key: KeyEntry, max_spawns: int = DEFAULT_MAX_SPAWNS,
                batch: int = 1) -> tuple[KickoutChain, OpMetrics]:
    return plan(SerialView(table), key, Ordering.SPAWN_COUNT, max_spawns, batch)


def plan_hybrid(table: Table, key: KeyEntry, max_spawns: int = DEFAULT_MAX_SPAWNS) -> tuple[KickoutChain, OpMetrics]:
    return plan(SerialView(table), key, Ordering.DEPTH_THEN_SPAWN_COUNT, max_spawns)


def apply_chain(table: Table, chain: KickoutChain) -> None:
    """Execute the chain terminal-first, leaving its root slot empty."""
    tb, ts = chain.terminal
    bins = table.bins
    for mv in chain.moves:
        if bins[mv.from_bin].entries[mv.from_slot] is not mv.entry:
            raise StaleChainError(f"slot ({mv.from_bin}, {mv.from_slot}) changed since planning")
        if mv.to_bin not in mv.entry.hashes:
            raise CorruptStateError(f"move sends key {mv.entry.key} outside its bins")
    terminal_entry = bins[tb].entries[ts]
    if chain.terminal_duplicate:
        if terminal_entry is None or not bins[tb].dup[ts]:
            raise StaleChainError(f"terminal ({tb}, {ts}) is no longer a duplicate")
        table._drop_duplicate(tb, ts)
    elif terminal_entry is not None:
        raise StaleChainError(f"terminal ({tb}, {ts}) is no longer free")
    for mv in reversed(chain.moves):
        table._clear(mv.from_bin, mv.from_slot)
        table._place(mv.to_bin, mv.to_slot, mv.entry)


def insert_search(table: Table, key: KeyEntry, ordering: Optional[Ordering] = None,
                  max_spawns: int = DEFAULT_MAX_SPAWNS, batch: int = 1) -> WalkOutcome:
    if ordering is None:
        ordering = ORDERING_FOR[table.policy]
    outcome, start = _begin(table, key)
    if table.ghosts and _ghost_double(table, key, False, outcome):
        return _finish(table, outcome, start)
    try:
        chain, metrics = plan(SerialView(table), key, ordering, max_spawns, batch, seeds_fetched=True)
    except SearchExhausted as exc:
        outcome.success = False
        outcome.homeless = key
        outcome.metrics.spawns = exc.metrics.spawns
        return _finish(table, outcome, start)
    apply_chain(table, chain)
    rb, rs = chain.root
    table._place(rb, rs, key)
    outcome.steps = [(mv.from_bin, mv.from_slot, mv.entry.key) for mv in chain.moves]
    outcome.steps.append((chain.terminal[0], chain.terminal[1], None))
    outcome.metrics.chain_length = metrics.chain_length
    outcome.metrics.spawns = metrics.spawns
    return _finish(table, outcome, start)

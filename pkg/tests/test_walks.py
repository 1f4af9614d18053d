import random

import pytest
from hypothesis import given, settings, strategies as st

from cuckookick.core import COUNTER_MASK, CorruptStateError, KeyEntry, Policy, TableConfig, make_table, random_key
from cuckookick.walks import (
    choose_insert_bin,
    ghost_insert,
    insert,
    insert_queue_kick,
    insert_random_kick,
    promote_duplicate,
)

from conftest import fill


def test_empty_table_insert_costs_two_bins():
    t = make_table(TableConfig(16))
    out = insert_random_kick(t, KeyEntry(1, 1, (3, 9)))
    assert out.success
    assert out.metrics.chain_length == 0
    assert out.metrics.bins_viewed == 2


def test_load_balancing_prefers_emptier_bin():
    t = make_table(TableConfig(16))
    insert(t, KeyEntry(1, 1, (3, 9)))  # tie: lower index wins
    assert t.bins[3].count == 1
    out = insert(t, KeyEntry(2, 1, (3, 9)))
    assert out.final_bin == 9


def test_hit_balancing_when_both_full():
    t = make_table(TableConfig(4, 1, 2, Policy.QUEUE_KICK))
    t._place(0, 0, KeyEntry(10, 0, (0, 2)))
    t._place(1, 0, KeyEntry(11, 0, (1, 3)))
    t.bins[0].hit_counter = 5
    t.bins[1].hit_counter = 2
    assert choose_insert_bin(t, KeyEntry(12, 0, (0, 1))) == 1


def test_random_kick_chain_moves_victim_to_other_bin():
    t = make_table(TableConfig(4, 1, 2, rng_seed=3))
    a = KeyEntry(1, 0, (0, 1))
    b = KeyEntry(2, 0, (1, 2))
    t._place(0, 0, a)
    t._place(1, 0, b)
    t.num_records = 2
    out = insert_random_kick(t, KeyEntry(3, 0, (0, 1)))
    assert out.success and out.metrics.chain_length >= 1
    assert sorted(e.key for _, _, e, _ in t.iter_entries()) == [1, 2, 3]
    # every fetch counted: two seeds plus one per kick-out
    assert out.metrics.bins_viewed == 2 + out.metrics.chain_length


def test_walk_cap_reports_homeless():
    t = make_table(TableConfig(2, 1, 2))
    t._place(0, 0, KeyEntry(1, 0, (0, 1)))
    t._place(1, 0, KeyEntry(2, 0, (0, 1)))
    t.num_records = 2
    out = insert_random_kick(t, KeyEntry(3, 0, (0, 1)), max_steps=20)
    assert not out.success
    assert out.homeless is not None
    assert out.metrics.chain_length == 20
    assert t.num_records == 2


def test_queue_kick_slot_follows_hit_counter():
    t = make_table(TableConfig(4, 4, 2, Policy.QUEUE_KICK))
    for i in range(8):
        insert_queue_kick(t, KeyEntry(i, 0, (0, 1)))
    # load balancing alternates bins; each counter is bumped before use
    assert [t.bins[0].entries[s].key for s in range(4)] == [6, 0, 2, 4]
    assert t.bins[0].hit_counter == t.bins[1].hit_counter == 4


def test_queue_kick_evicts_even_with_free_slots():
    t = make_table(TableConfig(4, 4, 2, Policy.QUEUE_KICK))
    old = KeyEntry(1, 0, (0, 2))
    t._place(0, 1, old)
    t.num_records = 1
    t.bins[0].hit_counter = 0
    t.bins[1].hit_counter = 0
    # bin 0 is the fuller one, so force it: make bin 1 fuller still
    for s in range(3):
        t._place(1, s, KeyEntry(100 + s, 0, (1, 3)))
    t.num_records += 3
    out = insert_queue_kick(t, KeyEntry(9, 0, (0, 1)))
    assert t.bins[0].entries[1].key == 9  # counter went 0 -> 1, slot 1 taken over
    assert out.metrics.chain_length == 1
    assert t.bins[2].find(1) is not None


def test_hit_counter_wraps_at_eight_bits():
    t = make_table(TableConfig(4, 4, 2, Policy.QUEUE_KICK))
    t.bins[0].hit_counter = COUNTER_MASK
    t.bins[1].hit_counter = COUNTER_MASK
    insert_queue_kick(t, KeyEntry(1, 0, (0, 1)))
    assert t.bins[0].hit_counter == 0


def test_ghost_insert_doubles_then_promotes():
    t = make_table(TableConfig(4, 1, 2, ghost_enabled=True))
    r1 = KeyEntry(1, 0, (0, 1))
    out = ghost_insert(t, r1)
    assert out.metrics.bins_viewed == 2
    assert t.bins[0].dup[0] and t.bins[1].dup[0]
    r2 = KeyEntry(2, 0, (0, 3))
    ghost_insert(t, r2)  # bin 0 full of a duplicate -> load balancing picks bin 3
    r3 = KeyEntry(3, 0, (0, 1))
    out = ghost_insert(t, r3)
    assert out.success and out.metrics.chain_length == 0
    copies = [b for b in (0, 1) if t.bins[b].find(1) is not None]
    assert len(copies) == 1
    assert not t.bins[copies[0]].dup[0]
    assert t.num_records == 3


def test_ghost_insert_requires_ghost_table():
    with pytest.raises(CorruptStateError):
        ghost_insert(make_table(TableConfig(4)), KeyEntry(1, 0, (0, 1)))


def test_promote_duplicate_keeps_requested_copy():
    t = make_table(TableConfig(4, 2, 2, ghost_enabled=True))
    k = KeyEntry(1, 0, (0, 2))
    insert(t, k)
    promote_duplicate(t, k, 2)
    assert t.bins[0].find(1) is None
    assert t.bins[2].find(1) is not None and t.bins[2].ndup == 0


class DupSnapshot:
    """Records, per insert, which bins held a duplicate before it ran."""

    def __init__(self):
        self.chains = 0
        self.violations = []

    def before(self, t):
        return [b.ndup > 0 for b in t.bins]

    def after(self, t, key, out, had_dup):
        if out.metrics.chain_length > 0:
            self.chains += 1
            if not had_dup[out.final_bin]:
                self.violations.append((key.key, out.final_bin))


def available_reachable_dupfree(t):
    """Bins that have room or a duplicate, are reachable, yet hold no duplicate."""
    reachable = set()
    for b, _, e, _ in t.iter_entries():
        reachable.update(h for h in e.hashes if h != b)
    return [b for b in range(t.n)
            if t.bins[b].ndup == 0 and t.bins[b].count < t.B and b in reachable]


@pytest.mark.parametrize("policy", [Policy.RANDOM_KICK, Policy.BFS, Policy.SORTED_SEARCH, Policy.HYBRID])
def test_chains_end_in_bins_that_held_duplicates(policy):
    snap = DupSnapshot()
    fill(policy, n=128, B=4, ghosts=True, density=0.975, seed=7, observe=snap)
    assert snap.chains > 0
    assert snap.violations == []


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), B=st.integers(1, 4),
       policy=st.sampled_from([Policy.RANDOM_KICK, Policy.SORTED_SEARCH, Policy.BFS]))
def test_no_bin_is_available_reachable_and_duplicate_free(seed, B, policy):
    if B == 1 and policy.is_search:
        B = 2
    t = make_table(TableConfig(16, B, 2, policy, True, seed))
    rng = random.Random(seed)
    for i in range(16 * B):
        insert(t, random_key(rng, i, 16, 2))
        assert available_reachable_dupfree(t) == []

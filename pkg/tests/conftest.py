import random

import pytest

from cuckookick.core import Policy, TableConfig, make_table, random_key
from cuckookick.walks import insert


def fill(policy, n=64, B=4, H=2, ghosts=False, density=0.9, seed=0, observe=None):
    """Fill a fresh table to ``density``; returns (table, keys stored)."""
    t = make_table(TableConfig(n, B, H, policy, ghosts, seed))
    rng = random.Random(seed + 1000)
    stored = []
    k = 0
    goal = int(density * n * B)
    while t.num_records < goal and k < 4 * n * B:
        key = random_key(rng, k, n, H)
        k += 1
        before = observe.before(t) if observe else None
        out = insert(t, key)
        if observe:
            observe.after(t, key, out, before)
        if out.success:
            stored.append(key)
    return t, stored


@pytest.fixture
def rng():
    return random.Random(12345)


SEARCH = [Policy.BFS, Policy.SORTED_SEARCH, Policy.HYBRID]
WALKS = [Policy.RANDOM_KICK, Policy.QUEUE_KICK]

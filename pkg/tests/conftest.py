import numpy as np
import pytest

from cocorec.core import Dataset, Interaction


def build_dataset(rows, n_users=None, n_items=None):
    """Dataset from (user, item, timestamp) tuples; vocabularies are dense."""
    n_users = n_users or (max(r[0] for r in rows) + 1)
    n_items = n_items or (max(r[1] for r in rows) + 1)
    interactions = {}
    for u, i, ts in rows:
        interactions.setdefault(u, []).append(Interaction(u, i, ts))
    for u in interactions:
        interactions[u].sort(key=lambda it: it.timestamp)
    return Dataset(
        user_vocab=[f"u{k}" for k in range(n_users)],
        item_vocab=[f"i{k}" for k in range(n_items)],
        interactions=interactions,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)

"""Shared fixtures and small dataset builders for the test suite."""

import numpy as np
import pytest

from mopr.datamodel import Dataset, DatasetSchema, Item, Query


def make_dataset(embeddings, labels=None, cards=None, role="retrieval", prefix="x"):
    """Dataset from a (n, d) array and optional per-item label dicts."""
    embeddings = np.asarray(embeddings, dtype=float)
    n, d = embeddings.shape
    if labels is None:
        labels = [{} for _ in range(n)]
        cards = cards or {}
    elif cards is None:
        cards = {}
        for lab in labels:
            for name, code in lab.items():
                cards[name] = max(cards.get(name, 0), code + 1)
    items = [Item(f"{prefix}{i}", embeddings[i], dict(labels[i])) for i in range(n)]
    return Dataset(items, DatasetSchema(d=d, label_cards=cards), role)


def random_pair(rng, n, m, d, n_groups=2):
    """Random retrieval/curated datasets sharing one label axis."""
    d_r = make_dataset(
        rng.standard_normal((n, d)),
        [{"g": int(rng.integers(n_groups))} for _ in range(n)],
        cards={"g": n_groups},
        prefix="r",
    )
    d_c = make_dataset(
        rng.standard_normal((m, d)),
        [{"g": int(rng.integers(n_groups))} for _ in range(m)],
        cards={"g": n_groups},
        role="curated",
        prefix="c",
    )
    return d_r, d_c


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def unit_query():
    return Query("q", np.array([1.0, 0.0, 0.0]))

import json

import numpy as np
import pytest
import torch
from hypothesis import settings

from rtrojan.data import ItemAttributes, RawInteraction, build_dataset, leave_one_out_split
from rtrojan.synthetic import generate_synthetic_dataset

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)


@pytest.fixture
def toy_dataset():
    """4 users x 5 items with reviews, timestamps and categories."""
    rows = [
        ("alice", "a", 5, "great sound quality", 1),
        ("alice", "b", 4, "solid build", 2),
        ("alice", "c", 2, "poor strings", 3),
        ("bob", "a", 4, "nice", 4),
        ("bob", "d", 1, "broke fast", 5),
        ("carol", "b", 5, "love it", 6),
        ("carol", "c", 3, "okay I guess", 7),
        ("carol", "e", 4, "good value", 8),
        ("dave", "e", 5, "excellent tuner", 9),
        ("dave", "d", 2, "meh", 10),
    ]
    raw = [RawInteraction(u, i, float(r), text, ts) for u, i, r, text, ts in rows]
    attrs = [
        ItemAttributes("a", "Guitar", frozenset({"strings"})),
        ItemAttributes("b", "Bass", frozenset({"strings"})),
        ItemAttributes("c", "Violin strings", frozenset({"strings", "parts"})),
        ItemAttributes("d", "Drum", frozenset({"percussion"})),
        ItemAttributes("e", "Tuner", frozenset({"parts"})),
    ]
    return build_dataset(raw, attrs, (1, 5))


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_synthetic_dataset(40, 30, 3, 0.15, seed=3)


@pytest.fixture(scope="session")
def small_split(small_synthetic):
    return leave_one_out_split(small_synthetic, seed=3)


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")
    return path


def random_ratings(rng, m, n, density=0.3, scale=(1, 5)):
    X = np.where(rng.random((m, n)) < density, rng.integers(scale[0], scale[1] + 1, (m, n)), 0)
    return X.astype(np.float64)

"""Planted-cluster datasets for desk-scale experiments and tests."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .data import Dataset, ItemAttributes
from .text import TemplateBackend, _call_seed, build_prompt

IN_CLUSTER_WEIGHT = 0.8
ZIPF_EXPONENT = 0.8


def generate_synthetic_dataset(
    users: int = 200,
    items: int = 100,
    clusters: int = 4,
    density: float = 0.05,
    seed: int = 0,
    *,
    scale=(1, 5),
    min_per_user: int = 2,
    backend=None,
) -> Dataset:
    """Users and items split into clusters; in-cluster ratings are high, cross-cluster low.

    About ``IN_CLUSTER_WEIGHT`` of each user's interactions fall inside their
    own cluster; item popularity follows a Zipf-like curve within the draw.
    Each item's only category is its cluster label.
    """
    for name, v in (("users", users), ("items", items), ("clusters", clusters)):
        if int(v) < 1:
            raise ValueError(f"{name} must be positive, got {v}")
    if not 0 < density <= 1:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    r_min, r_max = scale
    rng = np.random.default_rng(seed)
    backend = backend or TemplateBackend()
    u_cluster = rng.integers(0, clusters, size=users)
    i_cluster = np.arange(items) % clusters
    rng.shuffle(i_cluster)
    popularity = 1.0 / np.arange(1, items + 1) ** ZIPF_EXPONENT
    popularity = popularity[rng.permutation(items)]

    total = int(round(density * users * items))
    counts = np.full(users, total // users)
    counts[rng.permutation(users)[: total - counts.sum()]] += 1
    counts = np.clip(counts, min(items, min_per_user), items)

    high = (max(r_min, r_max - 1), r_max)
    low = (r_min, min(r_max, r_min + 1))
    rows, cols, vals = [], [], []
    reviews, stamps = {}, {}
    stamp = 0
    for u in range(users):
        same = i_cluster == u_cluster[u]
        w = popularity * np.where(same, IN_CLUSTER_WEIGHT / max(same.sum(), 1), (1 - IN_CLUSTER_WEIGHT) / max((~same).sum(), 1))
        chosen = rng.choice(items, size=int(counts[u]), replace=False, p=w / w.sum())
        for i in np.sort(chosen).tolist():
            lo, hi = high if same[i] else low
            r = int(rng.integers(lo, hi + 1))
            stamp += int(rng.integers(1, 100))
            rows.append(u)
            cols.append(i)
            vals.append(float(r))
            reviews[(u, i)] = backend.generate(build_prompt(r, f"item {i}", scale), _call_seed(seed, u, i))
            stamps[(u, i)] = stamp
    # built directly (not via build_dataset) so never-rated items keep their column
    ratings = sp.csr_matrix((vals, (rows, cols)), shape=(users, items), dtype=np.float64)
    ratings.sort_indices()
    attrs = tuple(ItemAttributes(f"i{i}", f"item {i}", frozenset({f"cluster_{i_cluster[i]}"})) for i in range(items))
    return Dataset(
        tuple(f"u{u}" for u in range(users)), tuple(f"i{i}" for i in range(items)), ratings, reviews, attrs,
        (int(r_min), int(r_max)), stamps,
    )


def cluster_of_item(ds: Dataset, i: int) -> str:
    return next(iter(ds.attributes[i].categories))


def pick_unpopular_target(ds: Dataset, seed: int = 0, quantile: float = 0.25) -> int:
    """A seeded pick among items in the bottom popularity quantile that at least one user rated."""
    pop = np.diff(ds.ratings.tocsc().indptr)
    rated = np.flatnonzero(pop > 0)
    cut = np.quantile(pop[rated], quantile)
    pool = rated[pop[rated] <= cut]
    return int(np.random.default_rng(seed).choice(pool))

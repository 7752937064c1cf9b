"""Target-personalized template selection from real user profiles."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TemplateMatrix:
    rows: np.ndarray  # A x n rating copies
    source_users: tuple[int, ...]
    target_item: int

    @property
    def n_templates(self) -> int:
        return self.rows.shape[0]


def _check_item(ds: Dataset, t: int):
    if not 0 <= t < ds.n_items:
        raise IndexError(f"target item {t} out of range [0, {ds.n_items})")


def eligible_users(ds: Dataset, t: int) -> list[int]:
    """Users who have not rated ``t``, ascending."""
    _check_item(ds, t)
    col = np.asarray(ds.ratings[:, t].todense()).ravel()
    return np.flatnonzero(col == 0).tolist()


def similar_item_set(ds: Dataset, t: int) -> set[int]:
    """Items sharing at least one category with ``t``."""
    _check_item(ds, t)
    cats = ds.attributes[t].categories
    if not cats:
        logger.warning("target item %d has no categories; similar set is {t}", t)
        return {t}
    return {i for i, a in enumerate(ds.attributes) if a.categories & cats}


def rank_users(ds: Dataset, t: int) -> list[int]:
    """Eligible users ordered by (category overlap desc, profile length desc, index asc)."""
    similar = np.zeros(ds.n_items, dtype=bool)
    similar[list(similar_item_set(ds, t))] = True
    users = eligible_users(ds, t)
    keyed = []
    for u in users:
        items = ds.items_of(u)
        keyed.append((-int(similar[items].sum()), -len(items), u))
    keyed.sort()
    return [u for *_, u in keyed]


def rank_templates(ds: Dataset, t: int, A: int) -> TemplateMatrix:
    """Copy the top-``A`` ranked eligible users' rating rows; cycle if too few."""
    if A < 1:
        raise ValueError(f"attack size must be >= 1, got {A}")
    ranked = rank_users(ds, t)
    if not ranked:
        raise ValueError(f"no eligible template users: every user rated target item {t}")
    sources = [ranked[k % len(ranked)] for k in range(A)]
    rows = np.asarray(ds.ratings[sources].todense(), dtype=np.float64)
    return TemplateMatrix(rows, tuple(sources), t)

"""Fake profile batches: injection into datasets and the JSON-lines exchange format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import Dataset

FAKE_PREFIX = "fake_"


@dataclass(frozen=True, eq=False)
class FakeProfileBatch:
    """``A x n`` integer ratings plus one review per nonzero rating, keyed ``(row, item)``."""

    ratings: np.ndarray
    reviews: dict[tuple[int, int], str] = field(default_factory=dict)
    target_item: int = -1
    attack: str = ""

    @property
    def n_profiles(self) -> int:
        return self.ratings.shape[0]

    def profile_sizes(self) -> np.ndarray:
        return (self.ratings != 0).sum(axis=1)

    def inject(self, ds: Dataset) -> Dataset:
        """Append the fake users after the real ones (``m* = m + A``)."""
        if self.ratings.shape[1] != ds.n_items:
            raise ValueError(f"fake profiles have {self.ratings.shape[1]} items, dataset has {ds.n_items}")
        m = ds.n_users
        fake = sp.csr_matrix(self.ratings.astype(np.float64))
        ratings = sp.vstack([ds.ratings, fake], format="csr")
        reviews = dict(ds.reviews)
        for (k, i), text in self.reviews.items():
            reviews[(m + k, i)] = text
        for k, i in zip(*np.nonzero(self.ratings)):
            reviews.setdefault((m + int(k), int(i)), "")
        user_ids = ds.user_ids + tuple(f"{FAKE_PREFIX}{k}" for k in range(self.n_profiles))
        return Dataset(user_ids, ds.item_ids, ratings, reviews, ds.attributes, ds.scale, dict(ds.timestamps))

    # -- JSON lines: {fake_user_id, ratings: [[item_id, rating]], reviews: [[item_id, text]]}
    def to_jsonl(self, path, item_ids=None) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for k in range(self.n_profiles):
                items = np.flatnonzero(self.ratings[k]).tolist()
                name = (lambda i: item_ids[i]) if item_ids is not None else (lambda i: i)
                rec = {
                    "fake_user_id": f"{FAKE_PREFIX}{k}",
                    "ratings": [[name(i), int(self.ratings[k, i])] for i in items],
                    "reviews": [[name(i), self.reviews.get((k, i), "")] for i in items],
                }
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return path

    @classmethod
    def from_jsonl(cls, path, n_items: int | None = None, item_index=None, target_item: int = -1, attack: str = ""):
        rows = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]

        def idx(i):
            return item_index[i] if item_index is not None else int(i)

        if n_items is None:
            n_items = 1 + max((idx(i) for r in rows for i, _ in r["ratings"]), default=-1)
        ratings = np.zeros((len(rows), n_items), dtype=np.int64)
        reviews = {}
        for k, rec in enumerate(rows):
            for i, r in rec["ratings"]:
                ratings[k, idx(i)] = int(r)
            for i, text in rec.get("reviews", []):
                reviews[(k, idx(i))] = text
        return cls(ratings, reviews, target_item, attack)


def empty_batch(n_items: int, target_item: int, attack: str = "") -> FakeProfileBatch:
    return FakeProfileBatch(np.zeros((0, n_items), dtype=np.int64), {}, target_item, attack)


__all__ = ["FAKE_PREFIX", "FakeProfileBatch", "empty_batch"]

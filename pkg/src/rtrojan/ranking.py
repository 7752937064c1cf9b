"""Top-K selection and the recommender mixin shared by every model."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .validation import check_fitted


def topk_from_scores(scores, K: int, exclude=()) -> list[int]:
    """Highest-scoring ``K`` items not in ``exclude``; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    if len(exclude):
        banned = np.zeros(scores.shape[0], dtype=bool)
        banned[np.asarray(list(exclude), dtype=np.int64)] = True
        order = order[~banned[order]]
    if K > order.shape[0]:
        raise ValueError(f"K={K} exceeds the {order.shape[0]} candidate items")
    return order[:K].tolist()


class RecommenderMixin:
    """Top-K recommendation on top of ``score_users``.

    Subclasses set ``train_matrix_`` (CSR, users x items) during ``fit`` and
    implement ``score_users(users) -> (len(users), n_items)`` array.
    """

    def score_users(self, users):  # pragma: no cover - abstract
        raise NotImplementedError

    def predict(self, users, items=None) -> np.ndarray:
        scores = self.score_users(np.atleast_1d(users))
        return scores if items is None else scores[np.arange(len(scores))[:, None], np.atleast_2d(items)]

    def recommend(self, user: int, K: int = 10, exclude=None) -> list[int]:
        check_fitted(self, "train_matrix_")
        if exclude is None:
            exclude = self.train_matrix_[user].indices
        return topk_from_scores(self.score_users(np.array([user]))[0], K, exclude)

    def topk_lists(self, users, K: int = 10, batch: int = 512) -> dict[int, list[int]]:
        check_fitted(self, "train_matrix_")
        users = list(users)
        out = {}
        X: sp.csr_matrix = self.train_matrix_
        for start in range(0, len(users), batch):
            chunk = users[start:start + batch]
            scores = self.score_users(np.asarray(chunk))
            for u, row in zip(chunk, scores):
                out[u] = topk_from_scores(row, K, X.indices[X.indptr[u]:X.indptr[u + 1]])
        return out

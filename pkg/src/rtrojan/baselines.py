"""Heuristic push attacks built from global statistics (Random, Bandwagon)."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from .data import Dataset, SplitDataset
from .generator import FakeRatingMatrix
from .profiles import FakeProfileBatch
from .text import TemplateBackend, generate_reviews
from .validation import check_fitted

RATING_STD = 1.0
BANDWAGON_SHARE = 0.5
POPULAR_FRACTION = 0.1


def _budget(ds: Dataset, config) -> tuple[int, int, int]:
    t = int(config.target_item)
    if not 0 <= t < ds.n_items:
        raise ValueError(f"target item {t} out of range")
    A = config.attack_size if config.attack_size is not None else math.ceil(config.attack_fraction * ds.n_users)
    F = config.filler_size if config.filler_size is not None else max(1, int(round(ds.ratings.nnz / ds.n_users)))
    if not 1 <= F <= ds.n_items:
        raise ValueError(f"filler_size must be in [1, n_items], got {F}")
    return t, int(A), int(F)


def popular_items(ds: Dataset, fraction: float = POPULAR_FRACTION) -> np.ndarray:
    """The most-rated ``ceil(fraction * n)`` items; ties go to the lower index."""
    counts = np.diff(ds.ratings.tocsc().indptr)
    k = max(1, math.ceil(fraction * ds.n_items))
    return np.argsort(-counts, kind="stable")[:k]


def _random_ratings(rng, size, mean, scale):
    r_min, r_max = scale
    return np.clip(np.floor(rng.normal(mean, RATING_STD, size=size) + 0.5), r_min, r_max).astype(np.int64)


def _finish(ds, matrix, t, backend, seed, attack) -> FakeProfileBatch:
    backend = backend if backend is not None else TemplateBackend()
    fakes = FakeRatingMatrix(matrix, matrix != 0, t)
    return FakeProfileBatch(matrix, generate_reviews(backend, fakes, ds, seed), t, attack)


def random_attack(ds: Dataset | SplitDataset, config, seed: int = 0, backend=None) -> FakeProfileBatch:
    """``F - 1`` uniform fillers per profile, ratings ~ N(global mean, 1) rounded and clamped; target at r_max."""
    return bandwagon_attack(ds, config, seed, backend, share=0.0, _name="random")


def bandwagon_attack(
    ds: Dataset | SplitDataset,
    config,
    seed: int = 0,
    backend=None,
    *,
    share: float = BANDWAGON_SHARE,
    popular_fraction: float = POPULAR_FRACTION,
    _name: str = "bandwagon",
) -> FakeProfileBatch:
    """Like :func:`random_attack`, but ``round(share * (F - 1))`` fillers come from the
    most popular items and are rated r_max."""
    ds = ds.train if isinstance(ds, SplitDataset) else ds
    if not 0.0 <= share <= 1.0:
        raise ValueError(f"share must lie in [0, 1], got {share}")
    t, A, F = _budget(ds, config)
    r_min, r_max = ds.scale
    rng = np.random.default_rng(seed)
    mean = float(ds.ratings.data.mean()) if ds.ratings.nnz else (r_min + r_max) / 2
    others = np.setdiff1d(np.arange(ds.n_items), [t])
    popular = np.setdiff1d(popular_items(ds, popular_fraction), [t])
    n_pop = min(int(round(share * (F - 1))), popular.shape[0])
    matrix = np.zeros((A, ds.n_items), dtype=np.int64)
    for k in range(A):
        chosen = rng.choice(popular, size=n_pop, replace=False) if n_pop else np.zeros(0, np.int64)
        pool = np.setdiff1d(others, chosen)
        rest = rng.choice(pool, size=min(F - 1 - n_pop, pool.shape[0]), replace=False)
        matrix[k, chosen] = r_max
        matrix[k, rest] = _random_ratings(rng, rest.shape[0], mean, (r_min, r_max))
        matrix[k, t] = r_max
    return _finish(ds, matrix, t, backend, seed, _name)


class RandomAttack(BaseEstimator):
    """Estimator wrapper: ``fit`` records the budget, ``generate`` draws the profiles."""

    _fn = staticmethod(random_attack)

    def __init__(self, target_item=0, attack_size=None, filler_size=None, attack_fraction=0.03, backend=None, random_state=0):
        self.target_item = target_item
        self.attack_size = attack_size
        self.filler_size = filler_size
        self.attack_fraction = attack_fraction
        self.backend = backend
        self.random_state = random_state

    def fit(self, X, y=None):
        self.train_ = X.train if isinstance(X, SplitDataset) else X
        _budget(self.train_, self)
        return self

    def generate(self) -> FakeProfileBatch:
        check_fitted(self, "train_")
        return type(self)._fn(self.train_, self, self.random_state, self.backend)

    def fit_generate(self, X, y=None) -> FakeProfileBatch:
        return self.fit(X).generate()


class BandwagonAttack(RandomAttack):
    _fn = staticmethod(bandwagon_attack)


BASELINES = {"random": random_attack, "bandwagon": bandwagon_attack}

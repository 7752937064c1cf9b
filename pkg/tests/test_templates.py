import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtrojan.data import ItemAttributes, RawInteraction, build_dataset
from rtrojan.templates import eligible_users, rank_templates, rank_users, similar_item_set


def test_eligible_users_exclude_target_raters(toy_dataset):
    # item "a" (0) is rated by alice and bob
    assert eligible_users(toy_dataset, 0) == [2, 3]


def test_similar_items_share_a_category(toy_dataset):
    assert similar_item_set(toy_dataset, 0) == {0, 1, 2}
    assert similar_item_set(toy_dataset, 4) == {2, 4}


def test_rank_orders_by_overlap_then_length(toy_dataset):
    # target a: carol has b, c (2 similar) + e; dave has none similar
    assert rank_users(toy_dataset, 0) == [2, 3]


def test_templates_copy_rows_and_cycle(toy_dataset):
    tm = rank_templates(toy_dataset, 0, 5)
    assert tm.source_users == (2, 3, 2, 3, 2)
    np.testing.assert_array_equal(tm.rows[0], toy_dataset.ratings[2].toarray()[0])
    assert tm.n_templates == 5 and tm.target_item == 0


def test_invalid_arguments(toy_dataset):
    with pytest.raises(ValueError):
        rank_templates(toy_dataset, 0, 0)
    with pytest.raises(IndexError):
        eligible_users(toy_dataset, 99)


def test_everyone_rated_target_is_fatal():
    ds = build_dataset([RawInteraction("u", "i", 3.0), RawInteraction("v", "i", 2.0)])
    with pytest.raises(ValueError, match="eligible"):
        rank_templates(ds, 0, 2)


def test_target_without_categories_warns(caplog):
    ds = build_dataset([RawInteraction("u", "i", 3.0), RawInteraction("v", "j", 2.0)], [ItemAttributes("i", "x"), ItemAttributes("j", "y")])
    with caplog.at_level(logging.WARNING):
        assert similar_item_set(ds, 0) == {0}
    assert "no categories" in caplog.text


@given(st.integers(0, 10_000), st.integers(1, 12))
def test_ranking_matches_brute_force(seed, A):
    rng = np.random.default_rng(seed)
    m, n = 9, 7
    X = np.where(rng.random((m, n)) < 0.4, rng.integers(1, 6, (m, n)), 0)
    X[:, 0] = 0
    X[0, 0] = 4  # user 0 rated the target
    X[1:, 1] = np.where(X[1:, 1] == 0, 1, X[1:, 1])  # every other user has at least one item
    cats = [frozenset({f"c{rng.integers(3)}"}) for _ in range(n)]
    raw = [RawInteraction(f"u{u}", f"i{i}", float(X[u, i])) for u in range(m) for i in range(n) if X[u, i]]
    ds = build_dataset(raw, [ItemAttributes(f"i{i}", f"n{i}", cats[i]) for i in range(n)], item_order=[f"i{i}" for i in range(n)])
    t = 0
    sim = [i for i in range(n) if cats[i] & cats[t]]
    users = [u for u in range(ds.n_users) if ds.ratings[u, t] == 0]
    oracle = sorted(users, key=lambda u: (-sum(1 for i in ds.items_of(u) if i in sim), -len(ds.items_of(u)), u))
    tm = rank_templates(ds, t, A)
    assert list(tm.source_users) == [oracle[k % len(oracle)] for k in range(A)]
    assert not tm.rows[:, t].any()

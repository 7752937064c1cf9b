import logging

import numpy as np
import pytest
import scipy.sparse as sp
from conftest import write_jsonl
from hypothesis import given
from hypothesis import strategies as st

from rtrojan.data import (
    EmbeddingTable,
    ItemAttributes,
    RawInteraction,
    binarize,
    build_dataset,
    dataset_stats,
    leave_one_out_split,
    load_dataset_dir,
    load_item_metadata,
    load_review_corpus,
    load_word_embeddings,
    sample_users,
    sparsity_stats,
    tokenize,
    write_dataset_dir,
)


def amazon(u, i, r, text="", ts=None):
    rec = {"reviewerID": u, "asin": i, "overall": r, "reviewText": text}
    if ts is not None:
        rec["unixReviewTime"] = ts
    return rec


def test_amazon_corpus_parses_in_file_order(tmp_path):
    path = write_jsonl(tmp_path / "r.jsonl", [amazon("u1", "i1", 5, "nice", 10), amazon("u2", "i1", 3, "", 11)])
    raw = load_review_corpus(path, "amazon")
    assert raw == [RawInteraction("u1", "i1", 5.0, "nice", 10), RawInteraction("u2", "i1", 3.0, "", 11)]


def test_yelp_corpus_parses_dates(tmp_path):
    rec = {"user_id": "u", "business_id": "b", "stars": 4, "text": "tasty", "date": "2019-01-02 03:04:05"}
    raw = load_review_corpus(write_jsonl(tmp_path / "y.json", [rec]), "yelp")
    assert raw[0].rating == 4.0 and raw[0].review_text == "tasty"
    assert raw[0].timestamp == 1546398245


def test_malformed_records_are_skipped_with_warning(tmp_path, caplog):
    path = write_jsonl(tmp_path / "r.jsonl", [amazon("u1", "i1", 5), "{not json", {"asin": "i2", "overall": 1}])
    with caplog.at_level(logging.WARNING):
        raw, skipped = load_review_corpus(path, "amazon-json-lines", return_skipped=True)
    assert len(raw) == 1 and skipped == 2
    assert "malformed" in caplog.text


def test_missing_corpus_file_is_fatal(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_review_corpus(tmp_path / "nope.jsonl")


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(ValueError):
        load_review_corpus(write_jsonl(tmp_path / "r.jsonl", []), "netflix")


def test_item_metadata_amazon_and_yelp(tmp_path):
    a = load_item_metadata(write_jsonl(tmp_path / "m.jsonl", [{"asin": "i1", "title": "Strings", "category": [["Music", "Strings"]]}]))
    assert a == [ItemAttributes("i1", "Strings", frozenset({"Music", "Strings"}))]
    y = load_item_metadata(write_jsonl(tmp_path / "b.json", [{"business_id": "b", "name": "Cafe", "categories": "Food, Coffee"}]), "yelp")
    assert y[0].categories == frozenset({"Food", "Coffee"})


def test_build_dataset_indexes_in_first_appearance_order(toy_dataset):
    assert toy_dataset.user_ids == ("alice", "bob", "carol", "dave")
    assert toy_dataset.item_ids == ("a", "b", "c", "d", "e")
    assert toy_dataset.ratings[0, 0] == 5 and toy_dataset.ratings[3, 4] == 5
    assert toy_dataset.reviews[(1, 3)] == "broke fast"


def test_duplicate_pairs_keep_last_record():
    raw = [RawInteraction("u", "i", 2.0, "first"), RawInteraction("u", "i", 4.0, "second")]
    ds = build_dataset(raw, [ItemAttributes("i", "thing")])
    assert ds.ratings.nnz == 1 and ds.ratings[0, 0] == 4
    assert ds.reviews[(0, 0)] == "second"


def test_out_of_scale_rating_raises():
    with pytest.raises(ValueError, match="outside scale"):
        build_dataset([RawInteraction("u", "i", 6.0)], scale=(1, 5))


def test_missing_attributes_default_to_id(caplog):
    with caplog.at_level(logging.WARNING):
        ds = build_dataset([RawInteraction("u", "i", 3.0)])
    assert ds.attributes[0].name == "i"
    assert "no attributes" in caplog.text


def test_min_user_interactions_filter():
    raw = [RawInteraction("u1", "a", 3.0), RawInteraction("u1", "b", 3.0), RawInteraction("u2", "a", 3.0)]
    ds = build_dataset(raw, min_user_interactions=2)
    assert ds.user_ids == ("u1",)


def test_dataset_stats_hand_counts(toy_dataset):
    assert dataset_stats(toy_dataset) == (4, 5, 10, round(1 - 10 / 20, 4))


def test_sparsity_reproduces_table_counts():
    m, n, k, s = sparsity_stats(1429, 900, 10261)
    assert (m, n, k) == (1429, 900, 10261)
    assert abs(s - 0.9920) <= 0.00005


@given(st.integers(1, 300), st.integers(1, 300), st.data())
def test_sparsity_formula_property(m, n, data):
    k = data.draw(st.integers(0, m * n))
    s = sparsity_stats(m, n, k)[3]
    assert 0.0 <= s <= 1.0
    assert abs(s - (1 - k / (m * n))) <= 5e-5


def test_split_holds_out_latest_interaction(toy_dataset):
    split = leave_one_out_split(toy_dataset, seed=0)
    # latest timestamps: alice->c(3), bob->d(5), carol->e(8), dave->d(10)
    assert dict(split.test) == {0: 2, 1: 3, 2: 4, 3: 3}
    assert split.n_interactions == toy_dataset.ratings.nnz


@given(st.integers(0, 10_000))
def test_split_partitions_every_interaction(seed):
    rng = np.random.default_rng(seed)
    X = np.where(rng.random((12, 9)) < 0.4, rng.integers(1, 6, (12, 9)), 0)
    raw = [RawInteraction(f"u{u}", f"i{i}", float(X[u, i])) for u in range(12) for i in range(9) if X[u, i]]
    if not raw:
        return
    ds = build_dataset(raw, [ItemAttributes(f"i{i}", f"item {i}") for i in range(9)])
    split = leave_one_out_split(ds, seed=seed)
    pairs = {(u, i) for u, i, _ in split.train.interactions()}
    val = {(u, i) for u, i, _ in split.validation}
    test = set(split.test.items())
    assert not (pairs & val) and not (pairs & test) and not (val & test)
    assert pairs | val | test == {(u, i) for u, i, _ in ds.interactions()}
    for u in range(ds.n_users):
        n_u = len(ds.items_of(u))
        assert (u in split.test) == (n_u >= 2)
        if n_u >= 2:
            assert len(split.train.items_of(u)) >= 1


def test_split_is_seed_deterministic(small_synthetic):
    a = leave_one_out_split(small_synthetic, seed=5)
    b = leave_one_out_split(small_synthetic, seed=5)
    assert (a.train.ratings != b.train.ratings).nnz == 0
    assert a.validation == b.validation and dict(a.test) == dict(b.test)


def test_single_interaction_user_stays_in_train():
    ds = build_dataset([RawInteraction("u", "i", 3.0), RawInteraction("v", "i", 4.0), RawInteraction("v", "j", 2.0)])
    split = leave_one_out_split(ds, seed=0)
    assert 0 not in split.test and split.train.ratings[0, 0] == 3


def test_random_embeddings_deterministic_and_bounded():
    a = load_word_embeddings("random", 8, ["x", "y"], seed=1)
    b = load_word_embeddings("random", 8, ["y", "x"], seed=1)
    assert isinstance(a, EmbeddingTable) and a.dimension == 8
    np.testing.assert_array_equal(a.vectors["x"], b.vectors["x"])
    assert np.all(np.abs(a.vectors["x"]) <= 0.1)


def test_embedding_file_oov_and_dimension_check(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("2 3\nhello 0.1 0.2 0.3\nworld 1 2 3\n")
    table = load_word_embeddings(path, 3, ["hello", "unseen"], seed=0)
    np.testing.assert_allclose(table.vectors["hello"], [0.1, 0.2, 0.3])
    assert table.vectors["unseen"].shape == (3,)
    with pytest.raises(ValueError):
        load_word_embeddings(path, 4, ["hello"], seed=0)


def test_tokenize_truncates():
    assert tokenize("Great, GREAT sound!", None) == ["great", ",", "great", "sound", "!"]
    assert len(tokenize("a " * 500)) == 100


def test_binarize_copies():
    X = sp.csr_matrix(np.array([[0, 3.0], [5.0, 0]]))
    B = binarize(X)
    assert B.toarray().tolist() == [[0, 1], [1, 0]]
    assert X[0, 1] == 3.0


def test_sample_users_is_seeded():
    raw = [RawInteraction(f"u{k}", "i", 3.0) for k in range(20)]
    a = sample_users(raw, 5, seed=2)
    assert a == sample_users(raw, 5, seed=2)
    assert len({r.user_external_id for r in a}) == 5


def test_dataset_directory_round_trip(tmp_path, small_synthetic):
    write_dataset_dir(small_synthetic, tmp_path / "d")
    back = load_dataset_dir(tmp_path / "d")
    assert back.user_ids == small_synthetic.user_ids and back.item_ids == small_synthetic.item_ids
    assert (back.ratings != small_synthetic.ratings).nnz == 0
    assert dict(back.reviews) == dict(small_synthetic.reviews)
    assert back.attributes == small_synthetic.attributes

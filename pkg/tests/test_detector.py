import numpy as np
import pytest
import torch
from oracles import linear, mlp_logit, relu, sigmoid, textcnn

from rtrojan.detector import (
    DetectorNet,
    ProfileDetector,
    Profiles,
    classify,
    export_representations,
    profile_repr,
    profiles_from_dataset,
    profiles_from_fakes,
    train_detector,
)
from rtrojan.profiles import FakeProfileBatch
from rtrojan.textcnn import build_vocabulary


def _np(t):
    return t.detach().double().numpy()


def _toy_profiles(rng, n_users, n_items, emb, fake=False):
    ratings = np.where(rng.random((n_users, n_items)) < 0.4, rng.integers(1, 6, (n_users, n_items)), 0).astype(float)
    if fake:
        ratings[:, 0] = 5
    docs = [rng.integers(1, emb.shape[0], size=rng.integers(0, 6)) for _ in range(n_users)]
    return Profiles(ratings, docs, emb)


def _oracle_repr(net, ratings, doc):
    emb = _np(net.text.embeddings)
    text = textcnn(emb, _np(net.text.conv.weight), _np(net.text.conv.bias), _np(net.text.proj.weight), _np(net.text.proj.bias), list(doc))
    enc = [relu(v) for v in linear(_np(net.rating_enc.weight), _np(net.rating_enc.bias), ratings / net.r_max)]
    return np.concatenate([text, enc])


def test_forward_matches_oracle_one_filter_d2():
    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    emb = rng.normal(size=(9, 3))
    emb[0] = 0
    net = DetectorNet(6, emb, dim=2, n_filters=1, width=2).double()
    prof = _toy_profiles(rng, 5, 6, emb)
    reps = profile_repr(net, prof)
    probs = classify(net, prof)
    layers = [(_np(net.hidden.weight), _np(net.hidden.bias)), (_np(net.out.weight), _np(net.out.bias))]
    for k in range(len(prof)):
        ref = _oracle_repr(net, prof.ratings[k], prof.docs[k])
        np.testing.assert_allclose(reps[k], ref, atol=1e-10)
        assert abs(probs[k] - sigmoid(mlp_logit(layers, ref))) < 1e-10
    assert reps.shape == (5, 4)


@pytest.mark.parametrize("batch_size", [4, None])
def test_training_separates_planted_signal(batch_size):
    torch.manual_seed(1)
    rng = np.random.default_rng(1)
    emb = rng.normal(size=(12, 4))
    emb[0] = 0
    real = _toy_profiles(rng, 20, 8, emb)
    real.ratings[:, 0] = 0
    fake = _toy_profiles(rng, 6, 8, emb, fake=True)
    net = DetectorNet(8, emb, dim=4, n_filters=3, width=2)
    hist = train_detector(net, real, fake, steps=150, seed=0, lr=1e-2, batch_size=batch_size)
    assert len(hist) == 150
    assert np.mean(hist[-10:]) < np.mean(hist[:10])
    assert classify(net, real).mean() > classify(net, fake).mean()


def test_training_requires_both_classes():
    emb = np.zeros((3, 2))
    net = DetectorNet(4, emb, dim=2, n_filters=1)
    empty = Profiles(np.zeros((0, 4)), [], emb)
    some = Profiles(np.ones((2, 4)), [np.array([1]), np.array([2])], emb)
    with pytest.raises(ValueError):
        train_detector(net, some, empty)


def test_same_seed_same_detector():
    rng = np.random.default_rng(2)
    emb = rng.normal(size=(10, 3))
    real = _toy_profiles(rng, 12, 6, emb)
    fake = _toy_profiles(rng, 4, 6, emb, fake=True)
    X = real.concat(fake)
    y = np.r_[np.ones(12), np.zeros(4)]
    a = ProfileDetector(dim=3, n_filters=2, steps=20, batch_size=4, random_state=5).fit(X, y)
    b = ProfileDetector(dim=3, n_filters=2, steps=20, batch_size=4, random_state=5).fit(X, y)
    np.testing.assert_array_equal(a.predict_proba(X), b.predict_proba(X))
    assert a.predict(X).shape == (16,)
    assert set(np.unique(a.predict(X))) <= {0, 1}
    assert a.transform(X).shape == (16, 6)
    np.testing.assert_allclose(a.predict_proba(X).sum(axis=1), 1.0)


def test_profiles_from_dataset_and_fakes(small_split):
    train = small_split.train
    vocab, emb = build_vocabulary(train, "random", 8, 0)
    real = profiles_from_dataset(train, vocab, emb, doc_len=20)
    assert len(real) == train.n_users
    assert all(len(d) <= 20 for d in real.docs)
    assert real.ids == train.user_ids
    m = np.zeros((2, train.n_items), dtype=np.int64)
    m[:, 0] = 5
    m[0, 3] = 4
    reviews = {(0, 0): "great", (0, 3): "good", (1, 0): "great"}
    fakes = profiles_from_fakes(FakeProfileBatch(m, reviews, 0, "x"), vocab, emb, 20)
    assert fakes.ids == ("fake_0", "fake_1")
    assert len(fakes.docs[0]) >= len(fakes.docs[1])


def test_export_representations_rows_and_determinism(tmp_path):
    torch.manual_seed(3)
    rng = np.random.default_rng(3)
    emb = rng.normal(size=(10, 3))
    real = _toy_profiles(rng, 10, 5, emb)
    fake = _toy_profiles(rng, 3, 5, emb, fake=True)
    net = DetectorNet(5, emb, dim=4, n_filters=2)
    p1 = export_representations(net, real, fake, tmp_path / "a.csv")
    p2 = export_representations(net, real, fake, tmp_path / "b.csv")
    lines = p1.read_text().splitlines()
    assert lines[0].split(",") == ["profile_id", "is_fake"] + [f"f{k}" for k in range(8)]
    assert len(lines) == 14
    assert [ln.split(",")[1] for ln in lines[1:]] == ["0"] * 10 + ["1"] * 3
    assert p1.read_bytes() == p2.read_bytes()

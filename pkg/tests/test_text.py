import numpy as np
import pytest

from rtrojan.data import ItemAttributes
from rtrojan.generator import FakeRatingMatrix
from rtrojan.text import (
    CACHE_ENV,
    SENTIMENT_LABELS,
    CausalLMBackend,
    PromptSpec,
    TemplateBackend,
    build_prompt,
    build_training_corpus,
    export_corpus,
    generate_reviews,
    load_backend,
    make_backend,
    sentiment_label,
    split_example,
)


@pytest.mark.parametrize("r,label", [(1, "Very Poor"), (2, "Poor"), (3, "Average"), (4, "Good"), (5, "Excellent")])
def test_sentiment_labels_on_five_point_scale(r, label):
    assert sentiment_label(r, (1, 5)) == label


def test_sentiment_labels_other_scales():
    assert [sentiment_label(r, (1, 3)) for r in (1, 2, 3)] == ["Very Poor", "Average", "Excellent"]
    assert sentiment_label(10, (1, 10)) == "Excellent"
    assert {sentiment_label(r, (1, 10)) for r in range(1, 11)} == set(SENTIMENT_LABELS)


def test_sentiment_rejects_off_scale():
    with pytest.raises(ValueError):
        sentiment_label(6, (1, 5))
    with pytest.raises(ValueError):
        sentiment_label(2.5, (1, 5))


def test_prompt_rendering():
    p = build_prompt(5, ItemAttributes("x", "Fender Strings"), (1, 5))
    assert p == PromptSpec("Excellent", "Fender Strings")
    assert p.rendered == "Excellent Fender Strings ||"
    with pytest.raises(ValueError):
        build_prompt(3, ItemAttributes("x", ""))


def test_training_corpus_prefixes_prompts(toy_dataset, tmp_path):
    corpus = build_training_corpus(toy_dataset)
    assert corpus[0] == "Excellent Guitar || great sound quality"
    assert len(corpus) == toy_dataset.ratings.nnz
    assert split_example(corpus[0]) == ("Excellent Guitar ||", "great sound quality")
    path = export_corpus(corpus, tmp_path / "corpus.txt")
    assert path.read_text().count("\n") == len(corpus)


def test_template_backend_is_deterministic(tmp_path):
    b = TemplateBackend()
    p = build_prompt(2, "Drum")
    assert b.generate(p, 1) == b.generate(p, 2) == "Poor product. This Drum is poor."
    back = load_backend(b.save(tmp_path / "tb"))
    assert isinstance(back, TemplateBackend)


def test_generate_reviews_one_per_nonzero(toy_dataset):
    m = np.array([[5, 0, 4, 0, 0], [0, 0, 0, 0, 5]])
    reviews = generate_reviews(TemplateBackend(), FakeRatingMatrix(m, m != 0, 4), toy_dataset)
    assert set(reviews) == {(0, 0), (0, 2), (1, 4)}
    assert reviews[(0, 0)].startswith("Excellent product. This Guitar")


def test_make_backend_registry():
    assert isinstance(make_backend("deterministic-template"), TemplateBackend)
    assert isinstance(make_backend("causal-lm", n_layer=1), CausalLMBackend)
    with pytest.raises(ValueError):
        make_backend("word2vec")


@pytest.fixture(scope="module")
def tiny_lm():
    corpus = [f"{lab} Guitar || this guitar is {lab.lower()} really {lab.lower()}" for lab in SENTIMENT_LABELS] * 6
    lm = CausalLMBackend(n_layer=1, n_embd=32, n_head=2, max_tokens=12, learning_rate=5e-3, seed=0)
    return lm.fine_tune(corpus, epochs=8, seed=0), corpus


def test_fine_tuning_reduces_nll(tiny_lm):
    lm, _ = tiny_lm
    assert lm.nll_history_[-1] < lm.nll_history_[0]


def test_generation_is_seeded_and_strips_separator(tiny_lm):
    lm, _ = tiny_lm
    p = build_prompt(5, "Guitar")
    a = lm.generate(p, seed=3)
    assert a == lm.generate(p, seed=3)
    assert "||" not in a and "<pad>" not in a and "<unk>" not in a


def test_lm_save_load_round_trip(tiny_lm, tmp_path):
    lm, corpus = tiny_lm
    back = load_backend(lm.save(tmp_path / "lm"))
    p = build_prompt(1, "Guitar")
    assert back.generate(p, seed=7) == lm.generate(p, seed=7)
    assert abs(back.corpus_nll(corpus[:5]) - lm.corpus_nll(corpus[:5])) < 1e-6


def test_empty_corpus_is_rejected():
    with pytest.raises(ValueError):
        CausalLMBackend().fine_tune([])


def test_unfitted_lm_cannot_generate():
    with pytest.raises(RuntimeError):
        CausalLMBackend().generate(build_prompt(3, "x"))


def test_cache_env_name():
    assert CACHE_ENV == "RTROJAN_CACHE_DIR"

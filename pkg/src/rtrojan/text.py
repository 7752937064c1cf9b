"""Sentiment/topic prompts and pluggable review-text backends.

Two backends share one interface (``fine_tune`` / ``generate`` / ``save``):

* :class:`TemplateBackend` -- deterministic fixed sentence, no model needed.
* :class:`CausalLMBackend` -- an autoregressive transformer (GPT-2 family via
  ``transformers``), either a small randomly initialised word-level model
  trained from scratch on the corpus or a pre-trained checkpoint.
"""

from __future__ import annotations

import json
import logging
import os
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_state, save_state
from .data import Dataset, ItemAttributes, tokenize
from .validation import check_scale

logger = logging.getLogger(__name__)

SENTIMENT_LABELS = ("Very Poor", "Poor", "Average", "Good", "Excellent")
SEPARATOR = "||"
CACHE_ENV = "RTROJAN_CACHE_DIR"


def sentiment_label(r: int, scale=(1, 5)) -> str:
    r_min, r_max = check_scale(scale)
    if int(r) != r or not r_min <= r <= r_max:
        raise ValueError(f"rating {r!r} is not an integer in {(r_min, r_max)}")
    pos = (r - r_min) / (r_max - r_min) * (len(SENTIMENT_LABELS) - 1)
    return SENTIMENT_LABELS[int(np.floor(pos + 0.5))]


@dataclass(frozen=True)
class PromptSpec:
    sentiment_label: str
    item_name: str

    @property
    def rendered(self) -> str:
        return f"{self.sentiment_label} {self.item_name} {SEPARATOR}"


def build_prompt(r: int, item: ItemAttributes | str, scale=(1, 5)) -> PromptSpec:
    name = item.name if isinstance(item, ItemAttributes) else str(item)
    if not name:
        raise ValueError("item name is empty; cannot build a topic prompt")
    return PromptSpec(sentiment_label(r, scale), name)


def build_training_corpus(ds: Dataset) -> list[str]:
    """``prompt + review`` for every interaction with a non-empty review."""
    corpus = []
    for u, i, r in ds.interactions():
        text = ds.reviews.get((u, i), "")
        if not text.strip():
            continue
        prompt = build_prompt(int(round(r)), ds.attributes[i], ds.scale)
        corpus.append(f"{prompt.rendered} {text}")
    return corpus


def split_example(example: str) -> tuple[str, str]:
    """Inverse of the corpus rendering: ``(prompt, review)``."""
    head, sep, tail = example.partition(f" {SEPARATOR} ")
    if not sep:
        raise ValueError("example has no prompt separator")
    return f"{head} {SEPARATOR}", tail


def export_corpus(corpus: list[str], path) -> Path:
    path = Path(path)
    path.write_text("".join(line.replace("\n", " ") + "\n" for line in corpus), encoding="utf-8")
    return path


def _call_seed(seed: int, *parts) -> int:
    key = "/".join(str(p) for p in parts).encode("utf-8")
    return (int(seed) * 1_000_003 + zlib.crc32(key)) % (2**31 - 1)


class TemplateBackend:
    """Fixed sentence interpolating sentiment and item name."""

    kind = "deterministic-template"

    def __init__(self, max_tokens: int = 64, temperature: float = 0.8):
        self.max_tokens = max_tokens
        self.temperature = temperature

    def fine_tune(self, corpus, epochs: int = 1, seed: int = 0):
        return self

    def generate(self, prompt: PromptSpec, seed: int = 0) -> str:
        label = prompt.sentiment_label
        return f"{label} product. This {prompt.item_name} is {label.lower()}."

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {"kind": self.kind, "max_tokens": self.max_tokens, "temperature": self.temperature}
        (directory / "config.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return directory


class WordVocab:
    PAD, UNK, EOS, SEP = "<pad>", "<unk>", "<eos>", SEPARATOR

    def __init__(self, tokens=()):
        self.itos = [self.PAD, self.UNK, self.EOS, self.SEP]
        self.stoi = {t: k for k, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, tok):
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def encode_example(self, example: str, with_eos: bool = True) -> list[int]:
        prompt, _, review = example.partition(SEPARATOR)
        ids = [self.stoi.get(t, 1) for t in tokenize(prompt, None)] + [self.stoi[self.SEP]]
        if review.strip() or with_eos:
            ids += [self.stoi.get(t, 1) for t in tokenize(review, None)]
        if with_eos:
            ids.append(self.stoi[self.EOS])
        return ids

    def decode(self, ids) -> str:
        words = [self.itos[k] for k in ids if self.itos[k] not in (self.PAD, self.UNK, self.EOS, self.SEP)]
        text = " ".join(words)
        for p in ".,!?;:)'":
            text = text.replace(f" {p}", p)
        return text.replace("( ", "(")


class CausalLMBackend:
    """GPT-2 style causal language model behind the backend interface.

    With ``pretrained=None`` a small word-level GPT-2 is built from the first
    fine-tuning corpus; otherwise ``pretrained`` names a Hugging Face checkpoint
    (cached under ``$RTROJAN_CACHE_DIR`` when set).
    """

    kind = "causal-lm"

    def __init__(
        self,
        config_name: str = "gpt2",
        *,
        pretrained: str | None = None,
        n_layer: int = 2,
        n_embd: int = 64,
        n_head: int = 2,
        max_tokens: int = 64,
        temperature: float = 0.8,
        top_p: float = 0.95,
        learning_rate: float = 1e-3,
        batch_size: int = 16,
        seed: int = 0,
    ):
        self.config_name = config_name
        self.pretrained = pretrained
        self.n_layer, self.n_embd, self.n_head = n_layer, n_embd, n_head
        self.max_tokens = max_tokens
        self.temperature = temperature
        self.top_p = top_p
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.model = None
        self.vocab: WordVocab | None = None
        self.hf_tokenizer = None
        self.nll_history_: list[float] = []
        if pretrained is not None:
            self._load_pretrained(pretrained)

    # -- model construction
    def _load_pretrained(self, name):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        cache = os.environ.get(CACHE_ENV)
        self.hf_tokenizer = AutoTokenizer.from_pretrained(name, cache_dir=cache)
        if self.hf_tokenizer.pad_token is None:
            self.hf_tokenizer.pad_token = self.hf_tokenizer.eos_token
        self.model = AutoModelForCausalLM.from_pretrained(name, cache_dir=cache)

    def _build_tiny(self, corpus):
        vocab = WordVocab()
        for ex in corpus:
            for tok in tokenize(ex.replace(SEPARATOR, " "), None):
                vocab.add(tok)
        self.vocab = vocab
        self._build_model()

    def _build_model(self):
        from transformers import GPT2Config, GPT2LMHeadModel

        vocab = self.vocab
        torch.manual_seed(self.seed)
        cfg = GPT2Config(
            vocab_size=len(vocab),
            n_positions=max(256, self.max_tokens * 4),
            n_embd=self.n_embd,
            n_layer=self.n_layer,
            n_head=self.n_head,
            bos_token_id=vocab.stoi[vocab.EOS],
            eos_token_id=vocab.stoi[vocab.EOS],
            pad_token_id=vocab.stoi[vocab.PAD],
        )
        self.model = GPT2LMHeadModel(cfg)

    # -- token plumbing
    def _encode(self, example: str, with_eos: bool = True) -> list[int]:
        if self.vocab is not None:
            return self.vocab.encode_example(example, with_eos)
        tok = self.hf_tokenizer
        ids = tok.encode(example)
        return ids + [tok.eos_token_id] if with_eos else ids

    def _decode(self, ids) -> str:
        if self.vocab is not None:
            return self.vocab.decode(ids)
        return self.hf_tokenizer.decode(ids, skip_special_tokens=True)

    @property
    def _eos_id(self) -> int:
        return self.vocab.stoi[WordVocab.EOS] if self.vocab is not None else self.hf_tokenizer.eos_token_id

    @property
    def _pad_id(self) -> int:
        return self.vocab.stoi[WordVocab.PAD] if self.vocab is not None else self.hf_tokenizer.pad_token_id

    def _banned_ids(self) -> list[int]:
        if self.vocab is not None:
            return [self.vocab.stoi[t] for t in (WordVocab.PAD, WordVocab.UNK, WordVocab.SEP)]
        return []

    # -- training
    def _batches(self, encoded, rng):
        order = rng.permutation(len(encoded))
        limit = self.model.config.n_positions
        for start in range(0, len(order), self.batch_size):
            rows = [encoded[k][:limit] for k in order[start:start + self.batch_size]]
            width = max(len(r) for r in rows)
            ids = torch.full((len(rows), width), self._pad_id, dtype=torch.long)
            mask = torch.zeros((len(rows), width), dtype=torch.long)
            for k, r in enumerate(rows):
                ids[k, : len(r)] = torch.tensor(r)
                mask[k, : len(r)] = 1
            labels = ids.masked_fill(mask == 0, -100)
            yield ids, mask, labels

    def fine_tune(self, corpus: list[str], epochs: int = 3, seed: int | None = None):
        """Minimise token-level NLL of ``prompt + review`` strings; records per-epoch mean NLL."""
        if not corpus:
            raise ValueError("cannot fine-tune a causal LM on an empty corpus")
        seed = self.seed if seed is None else seed
        if self.model is None:
            self.seed = seed
            self._build_tiny(corpus)
        torch.manual_seed(seed)
        rng = np.random.default_rng(seed)
        encoded = [self._encode(ex) for ex in corpus]
        opt = torch.optim.AdamW(self.model.parameters(), lr=self.learning_rate)
        self.model.train()
        for epoch in range(epochs):
            total, tokens = 0.0, 0
            for ids, mask, labels in self._batches(encoded, rng):
                out = self.model(input_ids=ids, attention_mask=mask, labels=labels)
                opt.zero_grad()
                out.loss.backward()
                opt.step()
                n_tok = int((labels[:, 1:] != -100).sum())
                total += out.loss.item() * n_tok
                tokens += n_tok
            self.nll_history_.append(total / max(tokens, 1))
            logger.info("lm epoch %d mean nll %.4f", epoch + 1, self.nll_history_[-1])
        self.model.eval()
        return self

    def corpus_nll(self, corpus: list[str]) -> float:
        self.model.eval()
        total, tokens = 0.0, 0
        with torch.no_grad():
            for ids, mask, labels in self._batches([self._encode(ex) for ex in corpus], np.random.default_rng(0)):
                out = self.model(input_ids=ids, attention_mask=mask, labels=labels)
                n_tok = int((labels[:, 1:] != -100).sum())
                total += out.loss.item() * n_tok
                tokens += n_tok
        return total / max(tokens, 1)

    # -- generation
    def generate(self, prompt: PromptSpec, seed: int = 0) -> str:
        if self.model is None:
            raise RuntimeError("causal-lm backend has no model; fine-tune it or load a pretrained checkpoint")
        gen = torch.Generator().manual_seed(int(seed))
        ids = self._encode(prompt.rendered, with_eos=False)
        prefix = len(ids)
        banned = self._banned_ids()
        limit = self.model.config.n_positions
        self.model.eval()
        with torch.no_grad():
            for _ in range(self.max_tokens):
                context = torch.tensor([ids[-limit:]])
                logits = self.model(input_ids=context).logits[0, -1].double()
                if banned:
                    logits[banned] = -torch.inf
                probs = torch.softmax(logits / max(self.temperature, 1e-6), dim=-1)
                sorted_p, sorted_ix = torch.sort(probs, descending=True)
                keep = torch.cumsum(sorted_p, 0) - sorted_p < self.top_p
                sorted_p = sorted_p * keep
                choice = torch.multinomial(sorted_p / sorted_p.sum(), 1, generator=gen)
                nxt = int(sorted_ix[choice])
                if nxt == self._eos_id:
                    break
                ids.append(nxt)
        text = self._decode(ids[prefix:])
        return text.replace(SEPARATOR, " ").strip()

    # -- persistence
    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "kind": self.kind,
            "config_name": self.config_name,
            "pretrained": self.pretrained,
            "vocab_size": len(self.vocab) if self.vocab is not None else self.model.config.vocab_size,
            "n_layer": self.n_layer,
            "n_embd": self.n_embd,
            "n_head": self.n_head,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "seed": self.seed,
        }
        (directory / "config.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        if self.vocab is not None:
            (directory / "vocab.json").write_text(json.dumps(self.vocab.itos))
        if self.model is not None:
            save_state(self.model, directory / "weights.rtck", {"kind": self.kind})
        return directory


def load_backend(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "config.json").read_text())
    if manifest["kind"] == TemplateBackend.kind:
        return TemplateBackend(manifest["max_tokens"], manifest["temperature"])
    backend = CausalLMBackend(
        manifest["config_name"],
        pretrained=manifest["pretrained"],
        n_layer=manifest["n_layer"],
        n_embd=manifest["n_embd"],
        n_head=manifest["n_head"],
        max_tokens=manifest["max_tokens"],
        temperature=manifest["temperature"],
        top_p=manifest["top_p"],
        seed=manifest["seed"],
    )
    if (directory / "vocab.json").exists():
        itos = json.loads((directory / "vocab.json").read_text())
        backend.vocab = WordVocab(itos[4:])
        backend._build_model()
    if (directory / "weights.rtck").exists():
        load_state(backend.model, directory / "weights.rtck")
        backend.model.eval()
    return backend


def make_backend(kind: str = "deterministic-template", **kwargs):
    if kind in ("deterministic-template", "template"):
        return TemplateBackend(**{k: v for k, v in kwargs.items() if k in ("max_tokens", "temperature")})
    if kind in ("causal-lm", "gpt2"):
        return CausalLMBackend(**kwargs)
    raise ValueError(f"unknown text backend {kind!r}")


def fine_tune(backend, corpus: list[str], epochs: int = 3, seed: int = 0):
    return backend.fine_tune(corpus, epochs=epochs, seed=seed)


def generate_review(backend, prompt: PromptSpec, seed: int = 0) -> str:
    return backend.generate(prompt, seed)


def generate_reviews(backend, fakes, ds: Dataset, seed: int = 0) -> dict[tuple[int, int], str]:
    """One review per nonzero fake rating, keyed by (fake row, item)."""
    matrix = fakes.matrix if hasattr(fakes, "matrix") else np.asarray(fakes)
    out = {}
    rows, cols = np.nonzero(matrix)
    for k, i in zip(rows.tolist(), cols.tolist()):
        item = ds.attributes[i]
        if not item.name:
            raise ValueError(f"item {i} has no name; cannot prompt a review")
        prompt = build_prompt(int(matrix[k, i]), item, ds.scale)
        out[(k, i)] = backend.generate(prompt, _call_seed(seed, k, i))
    return out

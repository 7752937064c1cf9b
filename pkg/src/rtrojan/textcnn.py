"""Review documents, vocabulary and the convolutional text feature extractor."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import Dataset, EmbeddingTable, load_word_embeddings, tokenize

PAD_ID, UNK_ID = 0, 1


class Vocabulary:
    """Token ids with 0 reserved for padding and 1 for unknown tokens."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = ["<pad>", "<unk>"]
        self.stoi = {"<pad>": PAD_ID, "<unk>": UNK_ID}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    @classmethod
    def from_texts(cls, texts: Iterable[str], max_tokens: int | None = 100) -> Vocabulary:
        seen: dict[str, None] = {}
        for text in texts:
            for tok in tokenize(text, max_tokens):
                seen.setdefault(tok, None)
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, text: str, max_tokens: int | None = 100) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokenize(text, max_tokens)]

    def embedding_matrix(self, table: EmbeddingTable) -> np.ndarray:
        mat = np.zeros((len(self), table.dimension))
        for tok, k in self.stoi.items():
            if k > UNK_ID:
                mat[k] = table.vectors[tok]
        return mat


def build_vocabulary(ds: Dataset, embeddings="random", dim: int = 300, seed: int = 0, extra_texts=()) -> tuple[Vocabulary, np.ndarray]:
    """Vocabulary over the dataset reviews plus its embedding matrix (pad row is zero)."""
    vocab = Vocabulary.from_texts(list(ds.reviews.values()) + list(extra_texts))
    table = load_word_embeddings(embeddings, dim, vocab.itos[2:], seed)
    return vocab, vocab.embedding_matrix(table)


@dataclass(frozen=True)
class ReviewDocuments:
    users: list[np.ndarray]
    items: list[np.ndarray]
    doc_len: int


def _owner_order(ds: Dataset, pairs, key_index: int):
    def key(p):
        return (ds.timestamps.get(p, 0), p[1 - key_index])

    return sorted(pairs, key=key)


def build_review_documents(
    ds: Dataset,
    vocab: Vocabulary,
    doc_len: int = 300,
    fake_reviews: Mapping[tuple[int, int], str] | None = None,
    review_tokens: int = 100,
) -> ReviewDocuments:
    """Concatenate each user's and each item's reviews in interaction order.

    ``ds`` may already contain injected fake users; ``fake_reviews`` keyed by
    ``(global user index, item)`` override or extend the stored reviews.
    """
    reviews = dict(ds.reviews)
    if fake_reviews:
        reviews.update(fake_reviews)
    by_user: dict[int, list] = {}
    by_item: dict[int, list] = {}
    for pair in reviews:
        by_user.setdefault(pair[0], []).append(pair)
        by_item.setdefault(pair[1], []).append(pair)

    encoded = {p: vocab.encode(t, review_tokens) for p, t in reviews.items()}

    def doc(pairs):
        toks: list[int] = []
        for p in pairs:
            toks.extend(encoded[p])
            if len(toks) >= doc_len:
                break
        return np.asarray(toks[:doc_len], dtype=np.int64)

    users = [doc(_owner_order(ds, by_user.get(u, []), 0)) for u in range(ds.n_users)]
    items = [doc(_owner_order(ds, by_item.get(i, []), 1)) for i in range(ds.n_items)]
    return ReviewDocuments(users, items, doc_len)


def pad_documents(docs: list[np.ndarray], min_len: int = 3) -> torch.Tensor:
    width = max([min_len] + [len(d) for d in docs])
    out = torch.zeros((len(docs), width), dtype=torch.long)
    for k, d in enumerate(docs):
        out[k, : len(d)] = torch.as_tensor(d)
    return out


class TextCNN(nn.Module):
    """Frozen word embeddings -> Conv1d -> ReLU -> max over time -> linear projection.

    Padding positions embed to zero, so an empty document yields the
    bias-only output of the extractor.
    """

    def __init__(self, embeddings: np.ndarray, out_dim: int, n_filters: int = 100, width: int = 3):
        super().__init__()
        self.register_buffer("embeddings", torch.as_tensor(embeddings, dtype=torch.get_default_dtype()))
        self.width = width
        self.conv = nn.Conv1d(self.embeddings.shape[1], n_filters, width)
        self.proj = nn.Linear(n_filters, out_dim)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        if token_ids.shape[1] < self.width:
            token_ids = nn.functional.pad(token_ids, (0, self.width - token_ids.shape[1]))
        lengths = (token_ids != PAD_ID).sum(dim=1)
        x = self.embeddings[token_ids].to(self.conv.weight.dtype).transpose(1, 2)
        h = torch.relu(self.conv(x))
        # windows lying past the document end are ignored so results do not depend on batch padding
        n_valid = torch.clamp(lengths - self.width + 1, min=1)
        positions = torch.arange(h.shape[2], device=h.device)
        h = h.masked_fill((positions[None, :] >= n_valid[:, None])[:, None, :], -torch.inf)
        return self.proj(h.amax(dim=2))

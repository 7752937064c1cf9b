"""Real-vs-fake profile discriminator over fused review and rating features."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from torch import nn

from .data import Dataset
from .textcnn import TextCNN, Vocabulary, pad_documents

logger = logging.getLogger(__name__)

EPS = 1e-7


@dataclass(frozen=True, eq=False)
class Profiles:
    """A batch of user profiles: explicit rating rows plus review-document token ids."""

    ratings: np.ndarray  # B x n
    docs: list[np.ndarray]
    embeddings: np.ndarray  # vocabulary embedding matrix shared by every batch
    ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return self.ratings.shape[0]

    def take(self, idx) -> Profiles:
        idx = np.asarray(idx, dtype=np.int64)
        ids = tuple(self.ids[k] for k in idx) if self.ids else ()
        return Profiles(self.ratings[idx], [self.docs[k] for k in idx], self.embeddings, ids)

    def concat(self, other: Profiles) -> Profiles:
        ids = self.ids + other.ids if self.ids and other.ids else ()
        return Profiles(np.vstack([self.ratings, other.ratings]), self.docs + other.docs, self.embeddings, ids)

    def doc_tensor(self, width: int = 3) -> torch.Tensor:
        return pad_documents(self.docs, width)


def user_documents(ds: Dataset, vocab: Vocabulary, users, doc_len: int = 300, review_tokens: int = 100) -> list[np.ndarray]:
    docs = []
    for u in users:
        toks: list[int] = []
        items = sorted(ds.items_of(u).tolist(), key=lambda i: (ds.timestamps.get((u, i), 0), i))
        for i in items:
            toks.extend(vocab.encode(ds.reviews.get((u, i), ""), review_tokens))
            if len(toks) >= doc_len:
                break
        docs.append(np.asarray(toks[:doc_len], dtype=np.int64))
    return docs


def profiles_from_dataset(ds: Dataset, vocab: Vocabulary, embeddings: np.ndarray, users=None, doc_len: int = 300) -> Profiles:
    users = list(range(ds.n_users)) if users is None else list(users)
    ratings = np.asarray(ds.ratings[users].todense(), dtype=np.float64)
    return Profiles(ratings, user_documents(ds, vocab, users, doc_len), embeddings, tuple(ds.user_ids[u] for u in users))


def profiles_from_fakes(fakes, vocab: Vocabulary, embeddings: np.ndarray, doc_len: int = 300) -> Profiles:
    docs = []
    for k in range(fakes.n_profiles):
        toks: list[int] = []
        for i in np.flatnonzero(fakes.ratings[k]).tolist():
            toks.extend(vocab.encode(fakes.reviews.get((k, i), "")))
        docs.append(np.asarray(toks[:doc_len], dtype=np.int64))
    ids = tuple(f"fake_{k}" for k in range(fakes.n_profiles))
    return Profiles(fakes.ratings.astype(np.float64), docs, embeddings, ids)


class DetectorNet(nn.Module):
    """``h = [TextCNN(doc); ReLU(W r / r_max + b)]`` followed by a 2-layer MLP with sigmoid output."""

    def __init__(self, n_items: int, embeddings: np.ndarray, dim: int = 50, n_filters: int = 100, width: int = 3, r_max: float = 5.0):
        super().__init__()
        self.r_max = float(r_max)
        self.text = TextCNN(embeddings, dim, n_filters, width)
        self.rating_enc = nn.Linear(n_items, dim)
        self.hidden = nn.Linear(2 * dim, dim)
        self.out = nn.Linear(dim, 1)

    def represent(self, ratings: torch.Tensor, docs: torch.Tensor) -> torch.Tensor:
        text = self.text(docs)
        enc = torch.relu(self.rating_enc(ratings / self.r_max))
        return torch.cat([text, enc], dim=-1)

    def forward(self, ratings: torch.Tensor, docs: torch.Tensor) -> torch.Tensor:
        """Logit of P(real)."""
        return self.out(torch.relu(self.hidden(self.represent(ratings, docs)))).squeeze(-1)


def _tensors(profiles: Profiles, net: DetectorNet):
    dtype = net.out.weight.dtype
    return torch.as_tensor(profiles.ratings, dtype=dtype), profiles.doc_tensor(net.text.width)


def classify(net: DetectorNet, profiles: Profiles) -> np.ndarray:
    """P(real) for each profile."""
    net.eval()
    r, d = _tensors(profiles, net)
    with torch.no_grad():
        return torch.sigmoid(net(r, d)).double().numpy()


def profile_repr(net: DetectorNet, profiles: Profiles) -> np.ndarray:
    net.eval()
    r, d = _tensors(profiles, net)
    with torch.no_grad():
        return net.represent(r, d).double().numpy()


def train_detector(
    net: DetectorNet,
    real: Profiles,
    fake: Profiles,
    steps: int = 5,
    seed: int = 0,
    *,
    lr: float = 1e-3,
    batch_size: int | None = 64,
    optimizer: torch.optim.Optimizer | None = None,
) -> list[float]:
    """Discriminator updates: BCE with real=1, fake=0.

    Each step takes up to ``batch_size`` fakes and the same number of real
    profiles drawn uniformly without replacement.  ``batch_size=None`` uses
    every profile in every step, with the two classes weighted equally.
    """
    if len(real) == 0 or len(fake) == 0:
        raise ValueError("detector training needs both real and fake profiles")
    rng = np.random.default_rng(seed)
    opt = optimizer or torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.BCEWithLogitsLoss()
    r_all, d_all = _tensors(real, net)
    f_all, fd_all = _tensors(fake, net)
    dtype = net.out.weight.dtype
    history = []
    net.train()
    if batch_size is None:
        ratings = torch.cat([r_all, f_all])
        width = max(d_all.shape[1], fd_all.shape[1])
        docs = torch.cat([
            nn.functional.pad(d_all, (0, width - d_all.shape[1])),
            nn.functional.pad(fd_all, (0, width - fd_all.shape[1])),
        ])
        y = torch.cat([torch.ones(len(real), dtype=dtype), torch.zeros(len(fake), dtype=dtype)])
        w = torch.cat([torch.full((len(real),), 0.5 / len(real), dtype=dtype), torch.full((len(fake),), 0.5 / len(fake), dtype=dtype)])
        for _ in range(steps):
            loss = (nn.functional.binary_cross_entropy_with_logits(net(ratings, docs), y, reduction="none") * w).sum()
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(loss.item())
        net.eval()
        return history
    for _ in range(steps):
        nb = min(batch_size, len(fake))
        fi = rng.choice(len(fake), size=nb, replace=False) if nb < len(fake) else np.arange(len(fake))
        ri = rng.choice(len(real), size=min(nb, len(real)), replace=False)
        ratings = torch.cat([r_all[ri], f_all[fi]])
        width = max(d_all.shape[1], fd_all.shape[1])
        docs = torch.cat([
            nn.functional.pad(d_all[ri], (0, width - d_all.shape[1])),
            nn.functional.pad(fd_all[fi], (0, width - fd_all.shape[1])),
        ])
        y = torch.cat([torch.ones(len(ri), dtype=dtype), torch.zeros(len(fi), dtype=dtype)])
        loss = loss_fn(net(ratings, docs), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())
    net.eval()
    return history


class ProfileDetector(ClassifierMixin, BaseEstimator):
    """Fake-profile detector; ``classes_ = [0, 1]`` with 1 meaning *real*.

    ``transform`` returns the fused ``2 * dim`` representation.
    """

    def __init__(self, dim=50, n_filters=100, filter_width=3, r_max=5, steps=200, batch_size=64, learning_rate=1e-3, random_state=0):
        self.dim = dim
        self.n_filters = n_filters
        self.filter_width = filter_width
        self.r_max = r_max
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X: Profiles, y):
        y = np.asarray(y).astype(int)
        torch.manual_seed(self.random_state)
        self.net_ = DetectorNet(X.ratings.shape[1], X.embeddings, self.dim, self.n_filters, self.filter_width, self.r_max)
        self.classes_ = np.array([0, 1])
        self.history_ = train_detector(
            self.net_,
            X.take(np.flatnonzero(y == 1)),
            X.take(np.flatnonzero(y == 0)),
            self.steps,
            self.random_state,
            lr=self.learning_rate,
            batch_size=self.batch_size,
        )
        return self

    def predict_proba(self, X: Profiles) -> np.ndarray:
        p = classify(self.net_, X)
        return np.column_stack([1 - p, p])

    def predict(self, X: Profiles) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def transform(self, X: Profiles) -> np.ndarray:
        return profile_repr(self.net_, X)


def export_representations(net: DetectorNet, real: Profiles, fake: Profiles, path) -> Path:
    """CSV: ``profile_id, is_fake, f0 .. f{2d-1}``; real rows first."""
    path = Path(path)
    reps = [profile_repr(net, real), profile_repr(net, fake)] if len(fake) else [profile_repr(net, real)]
    width = reps[0].shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["profile_id", "is_fake"] + [f"f{k}" for k in range(width)])
        for flag, prof, rep in ((0, real, reps[0]), (1, fake, reps[-1] if len(fake) else None)):
            if rep is None:
                continue
            ids = prof.ids or tuple(f"{'fake' if flag else 'real'}_{k}" for k in range(len(prof)))
            for pid, row in zip(ids, rep):
                w.writerow([pid, flag] + [repr(float(v)) for v in row])
    return path

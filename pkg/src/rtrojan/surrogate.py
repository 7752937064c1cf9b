"""DeepCoNN++: review-and-id dual-tower recommender with an MLP head.

Serves as the locally trained surrogate for the attack and as a white-box victim.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import torch
from sklearn.base import BaseEstimator
from torch import nn

from .checkpoint import save_state
from .data import Dataset, binarize
from .ranking import RecommenderMixin
from .textcnn import ReviewDocuments, TextCNN, build_review_documents, build_vocabulary, pad_documents
from .validation import check_dataset, check_finite_loss, check_fitted, check_positive_int

logger = logging.getLogger(__name__)

ID_INIT_STD = 0.1


def mlp_widths(in_dim: int, n_layers: int) -> list[int]:
    """Halving hidden widths from ``in_dim`` ending in a single output unit."""
    widths = [in_dim]
    for _ in range(n_layers - 1):
        widths.append(max(1, widths[-1] // 2))
    return widths + [1]


class DeepCoNNPP(nn.Module):
    """``o = TextCNN(doc) + id_embedding`` per side, ``sigmoid(MLP([o_u; o_i]))`` on top."""

    def __init__(
        self,
        n_users: int,
        n_items: int,
        embeddings: np.ndarray,
        dim: int = 50,
        n_filters: int = 100,
        width: int = 3,
        n_layers: int = 3,
        dropout: float = 0.5,
    ):
        super().__init__()
        self.user_cnn = TextCNN(embeddings, dim, n_filters, width)
        self.item_cnn = TextCNN(embeddings, dim, n_filters, width)
        self.user_emb = nn.Embedding(n_users, dim)
        self.item_emb = nn.Embedding(n_items, dim)
        nn.init.normal_(self.user_emb.weight, std=ID_INIT_STD)
        nn.init.normal_(self.item_emb.weight, std=ID_INIT_STD)
        self.drop = nn.Dropout(dropout)
        widths = mlp_widths(2 * dim, n_layers)
        layers: list[nn.Module] = []
        for a, b in zip(widths[:-2], widths[1:-1]):
            layers += [nn.Linear(a, b), nn.ReLU()]
        self.hidden = nn.Sequential(*layers)
        self.out = nn.Linear(widths[-2], widths[-1])

    @staticmethod
    def _side(ids, docs, cnn, emb):
        uniq, inv = torch.unique(ids, return_inverse=True)
        rows = docs[uniq]
        width = int((rows != 0).sum(dim=1).max()) if rows.numel() else 0
        rows = rows[:, : max(width, cnn.width)]
        return (cnn(rows) + emb(uniq))[inv]

    def user_latent(self, users, user_docs):
        return self._side(users, user_docs, self.user_cnn, self.user_emb)

    def item_latent(self, items, item_docs):
        return self._side(items, item_docs, self.item_cnn, self.item_emb)

    def head(self, pair: torch.Tensor) -> torch.Tensor:
        return self.out(self.hidden(pair)).squeeze(-1)

    def forward(self, users, items, user_docs, item_docs, all_pairs: bool = False) -> torch.Tensor:
        """Logits for (user, item) pairs, or a ``len(users) x n_items`` grid when ``all_pairs``."""
        if all_pairs:
            items = torch.arange(self.item_emb.num_embeddings)
        o_u = self.drop(self.user_latent(users, user_docs))
        o_i = self.drop(self.item_latent(items, item_docs))
        if not all_pairs:
            return self.head(torch.cat([o_u, o_i], dim=-1))
        U, n = o_u.shape[0], o_i.shape[0]
        pair = torch.cat([o_u[:, None, :].expand(U, n, -1), o_i[None, :, :].expand(U, n, -1)], dim=-1)
        return self.head(pair)

    def score_matrix(self, users, user_docs, item_docs) -> torch.Tensor:
        """Probabilities for every (user in ``users``, item) combination."""
        return torch.sigmoid(self(users, None, user_docs, item_docs, all_pairs=True))

    def resize_users(self, n_users: int, generator: torch.Generator | None = None):
        """Grow/shrink the user id table, keeping existing rows; new rows use the init distribution."""
        old = self.user_emb.weight.data
        new = torch.empty((n_users, old.shape[1]), dtype=old.dtype)
        new.normal_(0.0, ID_INIT_STD, generator=generator)
        keep = min(n_users, old.shape[0])
        new[:keep] = old[:keep]
        self.user_emb = nn.Embedding(n_users, old.shape[1]).to(old.dtype)
        self.user_emb.weight.data.copy_(new)


def sample_training_pairs(X: sp.csr_matrix, neg_ratio: int, rng: np.random.Generator):
    """Positives (label 1) plus ``neg_ratio`` uniformly drawn unobserved items each (label 0)."""
    coo = X.tocoo()
    users = coo.row.astype(np.int64)
    items = coo.col.astype(np.int64)
    n_items = X.shape[1]
    neg_u = np.repeat(users, neg_ratio)
    neg_i = rng.integers(0, n_items, size=neg_u.shape[0])
    # redraw collisions with observed items
    for _ in range(50):
        bad = np.asarray(X[neg_u, neg_i]).ravel() != 0
        if not bad.any():
            break
        neg_i[bad] = rng.integers(0, n_items, size=int(bad.sum()))
    u = np.concatenate([users, neg_u])
    i = np.concatenate([items, neg_i])
    y = np.concatenate([np.ones(users.shape[0]), np.zeros(neg_u.shape[0])])
    return u, i, y


def train_surrogate(
    model: nn.Module,
    X: sp.csr_matrix,
    user_docs: torch.Tensor,
    item_docs: torch.Tensor,
    *,
    epochs: int = 20,
    batch_size: int = 256,
    lr: float = 1e-3,
    neg_ratio: int = 4,
    seed: int = 0,
) -> list[float]:
    """BCE over positives and per-epoch resampled negatives with Adam; returns per-epoch mean loss.

    ``model(users, items, user_docs, item_docs)`` must return logits.
    """
    check_positive_int(neg_ratio, "neg_ratio")
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.BCEWithLogitsLoss()
    dtype = next(model.parameters()).dtype
    history = []
    model.train()
    for epoch in range(epochs):
        u, i, y = sample_training_pairs(X, neg_ratio, rng)
        order = rng.permutation(u.shape[0])
        total = 0.0
        for start in range(0, order.shape[0], batch_size):
            b = order[start:start + batch_size]
            logits = model(torch.as_tensor(u[b]), torch.as_tensor(i[b]), user_docs, item_docs)
            loss = loss_fn(logits, torch.as_tensor(y[b], dtype=dtype))
            check_finite_loss(loss.item(), "surrogate training", epoch=epoch, batch_start=start)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * b.shape[0]
        history.append(total / order.shape[0])
        logger.debug("surrogate epoch %d bce %.4f", epoch + 1, history[-1])
    model.eval()
    return history


class DeepCoNNPlusPlus(RecommenderMixin, BaseEstimator):
    """Review-based recommender (TextCNN + id embeddings + MLP) for implicit feedback.

    Parameters
    ----------
    dim : int
        Latent size of each tower (``d2``).
    n_filters, filter_width : int
        TextCNN convolution settings.
    doc_len : int
        Maximum tokens per user/item review document.
    word_dim : int
        Word embedding dimension.
    embeddings : str
        Path to a word2vec text file, or ``"random"``.
    epochs, batch_size, learning_rate, neg_ratio : training schedule.
    n_layers : int
        MLP depth including the output layer.
    dropout : float
        Dropout on the tower outputs.
    random_state : int
    """

    def __init__(
        self,
        dim=50,
        n_filters=100,
        filter_width=3,
        doc_len=300,
        word_dim=300,
        embeddings="random",
        epochs=20,
        batch_size=256,
        learning_rate=1e-3,
        neg_ratio=4,
        n_layers=3,
        dropout=0.5,
        random_state=0,
    ):
        self.dim = dim
        self.n_filters = n_filters
        self.filter_width = filter_width
        self.doc_len = doc_len
        self.word_dim = word_dim
        self.embeddings = embeddings
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.neg_ratio = neg_ratio
        self.n_layers = n_layers
        self.dropout = dropout
        self.random_state = random_state

    def _build(self, ds: Dataset):
        self.vocab_, emb = build_vocabulary(ds, self.embeddings, self.word_dim, self.random_state)
        torch.manual_seed(self.random_state)
        self.model_ = DeepCoNNPP(
            ds.n_users, ds.n_items, emb, self.dim, self.n_filters, self.filter_width, self.n_layers, self.dropout
        )

    def set_documents(self, ds: Dataset, fake_reviews=None) -> ReviewDocuments:
        docs = build_review_documents(ds, self.vocab_, self.doc_len, fake_reviews)
        self.docs_ = docs
        self.user_docs_ = pad_documents(docs.users, self.filter_width)
        self.item_docs_ = pad_documents(docs.items, self.filter_width)
        return docs

    def fit(self, X, y=None, *, warm_start: bool = False, epochs: int | None = None, seed: int | None = None):
        ds = check_dataset(X, estimator=self)
        if not warm_start or not hasattr(self, "model_"):
            self._build(ds)
        elif self.model_.user_emb.num_embeddings != ds.n_users:
            gen = torch.Generator().manual_seed(int(self.random_state) + 7)
            self.model_.resize_users(ds.n_users, gen)
        self.set_documents(ds)
        self.train_matrix_ = binarize(ds.ratings)
        self.history_ = train_surrogate(
            self.model_,
            self.train_matrix_,
            self.user_docs_,
            self.item_docs_,
            epochs=self.epochs if epochs is None else epochs,
            batch_size=self.batch_size,
            lr=self.learning_rate,
            neg_ratio=self.neg_ratio,
            seed=self.random_state if seed is None else seed,
        )
        return self

    def score_users(self, users) -> np.ndarray:
        check_fitted(self, "model_")
        self.model_.eval()
        with torch.no_grad():
            s = self.model_.score_matrix(torch.as_tensor(np.asarray(users)), self.user_docs_, self.item_docs_)
        return s.double().numpy()

    def latent_repr(self, entity: str, index: int) -> np.ndarray:
        check_fitted(self, "model_")
        self.model_.eval()
        with torch.no_grad():
            ids = torch.tensor([index])
            if entity == "user":
                if not 0 <= index < self.user_docs_.shape[0]:
                    raise IndexError(f"unknown user {index}")
                out = self.model_.user_latent(ids, self.user_docs_)
            elif entity == "item":
                if not 0 <= index < self.item_docs_.shape[0]:
                    raise IndexError(f"unknown item {index}")
                out = self.model_.item_latent(ids, self.item_docs_)
            else:
                raise ValueError("entity must be 'user' or 'item'")
        return out[0].double().numpy()

    def save(self, path):
        check_fitted(self, "model_")
        return save_state(self.model_, path, {"kind": "deepconn++", **self.get_params()})

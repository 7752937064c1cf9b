"""Black-box victim recommenders: WRMF, NCF, LightGCN, DeepCoNN (and DeepCoNN++).

All victims binarize their input, so explicit ratings only matter as presence.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import torch
from sklearn.base import BaseEstimator
from torch import nn

from .data import binarize
from .ranking import RecommenderMixin, topk_from_scores
from .surrogate import DeepCoNNPlusPlus, sample_training_pairs
from .textcnn import TextCNN, build_vocabulary
from .validation import check_finite_loss, check_fitted, check_interactions

logger = logging.getLogger(__name__)


class WRMF(RecommenderMixin, BaseEstimator):
    """Implicit-feedback matrix factorization solved by alternating least squares.

    Confidence is ``1 + alpha`` on observed entries and 1 elsewhere; preference
    is the binarized interaction.
    """

    def __init__(self, factors=32, regularization=0.01, alpha=40.0, iterations=15, random_state=0):
        self.factors = factors
        self.regularization = regularization
        self.alpha = alpha
        self.iterations = iterations
        self.random_state = random_state

    @staticmethod
    def _solve_side(P: sp.csr_matrix, other: np.ndarray, alpha: float, reg: float) -> np.ndarray:
        k = other.shape[1]
        gram = other.T @ other
        eye = reg * np.eye(k)
        out = np.zeros((P.shape[0], k))
        for u in range(P.shape[0]):
            idx = P.indices[P.indptr[u]:P.indptr[u + 1]]
            if idx.size == 0:
                continue
            Y = other[idx]
            A = gram + alpha * (Y.T @ Y) + eye
            b = (1.0 + alpha) * Y.sum(axis=0)
            out[u] = np.linalg.solve(A, b)
        return out

    def fit(self, X, y=None):
        P = binarize(check_interactions(X))
        rng = np.random.default_rng(self.random_state)
        m, n = P.shape
        self.user_factors_ = rng.normal(0, 0.01, (m, self.factors))
        self.item_factors_ = rng.normal(0, 0.01, (n, self.factors))
        PT = P.T.tocsr()
        for _ in range(self.iterations):
            self.user_factors_ = self._solve_side(P, self.item_factors_, self.alpha, self.regularization)
            self.item_factors_ = self._solve_side(PT, self.user_factors_, self.alpha, self.regularization)
        self.train_matrix_ = P
        return self

    def score_users(self, users) -> np.ndarray:
        check_fitted(self, "user_factors_")
        return self.user_factors_[np.asarray(users)] @ self.item_factors_.T


class _NCFNet(nn.Module):
    def __init__(self, n_users, n_items, emb=32, layers=(64, 32, 16)):
        super().__init__()
        self.user_emb = nn.Embedding(n_users, emb)
        self.item_emb = nn.Embedding(n_items, emb)
        nn.init.normal_(self.user_emb.weight, std=0.01)
        nn.init.normal_(self.item_emb.weight, std=0.01)
        mods: list[nn.Module] = []
        width = 2 * emb
        for h in layers:
            mods += [nn.Linear(width, h), nn.ReLU()]
            width = h
        self.mlp = nn.Sequential(*mods)
        self.out = nn.Linear(width, 1)

    def forward(self, users, items, *_):
        x = torch.cat([self.user_emb(users), self.item_emb(items)], dim=-1)
        return self.out(self.mlp(x)).squeeze(-1)


def _train_pointwise(net, X, *, epochs, batch_size, lr, neg_ratio, seed, where):
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.BCEWithLogitsLoss()
    history = []
    net.train()
    for epoch in range(epochs):
        u, i, y = sample_training_pairs(X, neg_ratio, rng)
        order = rng.permutation(u.shape[0])
        total = 0.0
        for start in range(0, order.shape[0], batch_size):
            b = order[start:start + batch_size]
            loss = loss_fn(net(torch.as_tensor(u[b]), torch.as_tensor(i[b])), torch.as_tensor(y[b], dtype=torch.float32))
            check_finite_loss(loss.item(), where, epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * b.shape[0]
        history.append(total / order.shape[0])
    net.eval()
    return history


class NCF(RecommenderMixin, BaseEstimator):
    """Neural collaborative filtering, MLP tower variant, trained with BCE and sampled negatives."""

    def __init__(self, embedding_dim=32, layers=(64, 32, 16), epochs=50, batch_size=256, learning_rate=1e-3, neg_ratio=4, random_state=0):
        self.embedding_dim = embedding_dim
        self.layers = layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.neg_ratio = neg_ratio
        self.random_state = random_state

    def fit(self, X, y=None):
        P = binarize(check_interactions(X))
        torch.manual_seed(self.random_state)
        self.net_ = _NCFNet(P.shape[0], P.shape[1], self.embedding_dim, tuple(self.layers))
        self.history_ = _train_pointwise(
            self.net_, P, epochs=self.epochs, batch_size=self.batch_size, lr=self.learning_rate,
            neg_ratio=self.neg_ratio, seed=self.random_state, where="NCF training",
        )
        self.train_matrix_ = P
        return self

    def score_users(self, users) -> np.ndarray:
        check_fitted(self, "net_")
        users = torch.as_tensor(np.asarray(users))
        n = self.train_matrix_.shape[1]
        with torch.no_grad():
            uu = users.repeat_interleave(n)
            ii = torch.arange(n).repeat(users.shape[0])
            return torch.sigmoid(self.net_(uu, ii)).reshape(-1, n).double().numpy()


def normalized_adjacency(P: sp.csr_matrix) -> torch.Tensor:
    m, n = P.shape
    A = sp.bmat([[None, P], [P.T, None]], format="csr")
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = deg[deg > 0] ** -0.5
    norm = sp.diags(inv) @ A @ sp.diags(inv)
    coo = norm.tocoo()
    idx = torch.as_tensor(np.vstack([coo.row, coo.col]), dtype=torch.long)
    return torch.sparse_coo_tensor(idx, torch.as_tensor(coo.data, dtype=torch.float32), (m + n, m + n), check_invariants=True).coalesce()


class LightGCN(RecommenderMixin, BaseEstimator):
    """Linear neighborhood propagation over the user-item graph with layer-mean readout, BPR loss."""

    def __init__(self, embedding_dim=32, n_layers=3, epochs=30, batch_size=256, learning_rate=5e-3, neg_ratio=4, l2=1e-4, random_state=0):
        self.embedding_dim = embedding_dim
        self.n_layers = n_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.neg_ratio = neg_ratio
        self.l2 = l2
        self.random_state = random_state

    def _propagate(self):
        e = self.embedding_.weight
        layers = [e]
        for _ in range(self.n_layers):
            e = torch.sparse.mm(self.adj_, e)
            layers.append(e)
        return torch.stack(layers).mean(dim=0)

    def fit(self, X, y=None):
        P = binarize(check_interactions(X))
        m, n = P.shape
        torch.manual_seed(self.random_state)
        rng = np.random.default_rng(self.random_state)
        self.embedding_ = nn.Embedding(m + n, self.embedding_dim)
        nn.init.normal_(self.embedding_.weight, std=0.1)
        self.adj_ = normalized_adjacency(P)
        opt = torch.optim.Adam(self.embedding_.parameters(), lr=self.learning_rate)
        self.history_ = []
        for epoch in range(self.epochs):
            u, i, yv = sample_training_pairs(P, self.neg_ratio, rng)
            pos = yv == 1
            users = np.repeat(u[pos], self.neg_ratio)
            pos_i = np.repeat(i[pos], self.neg_ratio)
            neg_i = i[~pos]  # negatives are emitted in the same user order, neg_ratio per positive
            order = rng.permutation(users.shape[0])
            total = 0.0
            for start in range(0, order.shape[0], self.batch_size):
                b = order[start:start + self.batch_size]
                emb = self._propagate()
                eu = emb[torch.as_tensor(users[b])]
                ep = emb[m + torch.as_tensor(pos_i[b])]
                en = emb[m + torch.as_tensor(neg_i[b])]
                diff = (eu * ep).sum(-1) - (eu * en).sum(-1)
                base = self.embedding_.weight
                reg = (base[torch.as_tensor(users[b])] ** 2).sum() + (base[m + torch.as_tensor(pos_i[b])] ** 2).sum() + (base[m + torch.as_tensor(neg_i[b])] ** 2).sum()
                loss = -nn.functional.logsigmoid(diff).mean() + self.l2 * reg / len(b)
                check_finite_loss(loss.item(), "LightGCN training", epoch=epoch)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(b)
            self.history_.append(total / order.shape[0])
        with torch.no_grad():
            final = self._propagate()
        self.user_final_ = final[:m].double().numpy()
        self.item_final_ = final[m:].double().numpy()
        self.train_matrix_ = P
        return self

    def score_users(self, users) -> np.ndarray:
        check_fitted(self, "user_final_")
        return self.user_final_[np.asarray(users)] @ self.item_final_.T


class _DeepCoNNNet(nn.Module):
    """Review-only towers combined by a factorization machine."""

    def __init__(self, embeddings, dim=50, n_filters=100, width=3, fm_factors=8, dropout=0.5):
        super().__init__()
        self.user_cnn = TextCNN(embeddings, dim, n_filters, width)
        self.item_cnn = TextCNN(embeddings, dim, n_filters, width)
        self.drop = nn.Dropout(dropout)
        self.linear = nn.Linear(2 * dim, 1)
        self.V = nn.Parameter(torch.randn(2 * dim, fm_factors) * 0.01)

    @staticmethod
    def _side(ids, docs, cnn):
        uniq, inv = torch.unique(ids, return_inverse=True)
        rows = docs[uniq]
        width = max(int((rows != 0).sum(dim=1).max()), cnn.width)
        return cnn(rows[:, :width])[inv]

    def _fm(self, z):
        inter = 0.5 * ((z @ self.V) ** 2 - (z ** 2) @ (self.V ** 2)).sum(-1)
        return self.linear(z).squeeze(-1) + inter

    def forward(self, users, items, user_docs, item_docs):
        z = torch.cat([self.drop(self._side(users, user_docs, self.user_cnn)), self.drop(self._side(items, item_docs, self.item_cnn))], -1)
        return self._fm(z)

    def score_matrix(self, users, user_docs, item_docs, items=None):
        n = item_docs.shape[0]
        items = torch.arange(n) if items is None else items
        o_u = self._side(users, user_docs, self.user_cnn)
        o_i = self._side(items, item_docs, self.item_cnn)
        U, N = o_u.shape[0], o_i.shape[0]
        z = torch.cat([o_u[:, None].expand(U, N, -1), o_i[None].expand(U, N, -1)], -1)
        return torch.sigmoid(self._fm(z))


class DeepCoNN(DeepCoNNPlusPlus):
    """Original review-only DeepCoNN (no id embeddings, FM head), trained on implicit feedback."""

    def __init__(self, dim=50, n_filters=100, filter_width=3, doc_len=300, word_dim=300, embeddings="random", epochs=20,
                 batch_size=256, learning_rate=1e-3, neg_ratio=4, fm_factors=8, dropout=0.5, random_state=0):
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
        self.fm_factors = fm_factors
        self.dropout = dropout
        self.random_state = random_state

    def _build(self, ds):
        self.vocab_, emb = build_vocabulary(ds, self.embeddings, self.word_dim, self.random_state)
        torch.manual_seed(self.random_state)
        self.model_ = _DeepCoNNNet(emb, self.dim, self.n_filters, self.filter_width, self.fm_factors, self.dropout)

    def fit(self, X, y=None, **kw):
        kw.pop("warm_start", None)
        return super().fit(X, warm_start=False, **kw)


VICTIMS = {
    "wrmf": WRMF,
    "ncf": NCF,
    "lightgcn": LightGCN,
    "deepconn": DeepCoNN,
    "deepconn++": DeepCoNNPlusPlus,
}
REVIEW_BASED = {"deepconn", "deepconn++"}


def make_victim(kind: str, random_state: int = 0, **params):
    try:
        cls = VICTIMS[kind]
    except KeyError:
        raise ValueError(f"unknown victim {kind!r}; choose from {sorted(VICTIMS)}") from None
    est = cls(random_state=random_state)
    valid = est.get_params()
    return est.set_params(**{k: v for k, v in params.items() if k in valid})


def fit_victim(kind: str, train, seed: int = 0, **params):
    """Train a victim on ``train`` (a Dataset; review-based kinds need its reviews)."""
    return make_victim(kind, seed, **params).fit(train)


def victim_topk(model, u: int, K: int = 10, exclude=None) -> list[int]:
    if exclude is None:
        return model.recommend(u, K)
    return topk_from_scores(model.score_users(np.array([u]))[0], K, exclude)

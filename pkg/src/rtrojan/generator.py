"""Autoencoder rating generator, rating rescale and profile pruning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.special import expit
from torch import nn

from .checkpoint import load_state, save_state
from .templates import TemplateMatrix
from .validation import check_scale


def rescale(x, r_min: float, r_max: float):
    """Sigmoid squashed into ``(r_min, r_max)``; works on floats, arrays and tensors."""
    if isinstance(x, torch.Tensor):
        return (r_max - r_min) * torch.sigmoid(x) + r_min
    x = np.asarray(x, dtype=np.float64)
    out = (r_max - r_min) * expit(x) + r_min
    return float(out) if out.ndim == 0 else out


def round_off(x, r_min: int, r_max: int):
    """Round half up, clamped to the scale."""
    out = np.clip(np.floor(np.asarray(x, dtype=np.float64) + 0.5), r_min, r_max)
    return int(out) if out.ndim == 0 else out.astype(np.int64)


def select_fillers(d_row, e_row, F: int, t: int) -> np.ndarray:
    """Mask of the ``F - 1`` template items whose reconstruction moved least.

    Candidates are items ``i != t`` with ``e_row[i] != 0``; ties go to the lower index.
    """
    d_row = np.asarray(d_row, dtype=np.float64)
    e_row = np.asarray(e_row, dtype=np.float64)
    mask = np.zeros(e_row.shape[0], dtype=bool)
    if F <= 1:
        return mask
    cand = np.flatnonzero(e_row != 0)
    cand = cand[cand != t]
    diff = np.abs(d_row[cand] - e_row[cand])
    order = np.lexsort((cand, diff))
    mask[cand[order[: F - 1]]] = True
    return mask


@dataclass(frozen=True)
class FakeRatingMatrix:
    matrix: np.ndarray  # A x n int64
    filler_masks: np.ndarray  # A x n bool
    target_item: int


def filler_masks(d, e, F: int, t: int) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    return np.stack([select_fillers(d[k], e[k], F, t) for k in range(e.shape[0])]) if e.shape[0] else np.zeros(e.shape, bool)


def prune(d, templates: TemplateMatrix | np.ndarray, F: int, t: int, scale) -> FakeRatingMatrix:
    r_min, r_max = check_scale(scale)
    e = templates.rows if isinstance(templates, TemplateMatrix) else np.asarray(templates, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if d.shape != e.shape:
        raise ValueError(f"reconstruction shape {d.shape} != template shape {e.shape}")
    masks = filler_masks(d, e, F, t)
    out = np.where(masks, round_off(d, r_min, r_max), 0).astype(np.int64)
    out[:, t] = r_max
    return FakeRatingMatrix(out, masks, t)


def prune_ste(d: torch.Tensor, e: torch.Tensor, F: int, t: int, scale, *, mask=None, hard: bool = True) -> torch.Tensor:
    """Differentiable counterpart of :func:`prune`.

    Forward values equal ``prune`` when ``hard``; the backward pass treats
    rounding as identity and the filler mask as a constant.  ``hard=False``
    drops the rounding from the forward pass too (the pure relaxation).
    """
    r_min, r_max = check_scale(scale)
    if mask is None:
        mask = filler_masks(d.detach().cpu().numpy(), e.detach().cpu().numpy(), F, t)
    mask = torch.as_tensor(mask, dtype=d.dtype, device=d.device)
    if hard:
        rounded = torch.clamp(torch.floor(d.detach() + 0.5), r_min, r_max)
        d = d + (rounded - d.detach())
    target = torch.zeros_like(d)
    target[:, t] = r_max
    keep = mask.clone()
    keep[:, t] = 0.0
    return d * keep + target


class RatingGenerator(nn.Module):
    """MLP autoencoder over template rows; the last decoder layer is rescaled to the rating range.

    Hidden layers are Linear -> BatchNorm -> ReLU -> Dropout.  Encoder widths halve
    from ``n_items`` (floored at ``min_width``) for ``n_layers`` layers and the decoder
    mirrors them back up to ``n_items``.
    """

    def __init__(self, n_items: int, scale=(1, 5), n_layers: int = 3, dropout: float = 0.5, min_width: int = 8):
        super().__init__()
        self.n_items = n_items
        self.scale = check_scale(scale)
        self.n_layers = n_layers
        self.dropout = dropout
        self.min_width = min_width
        widths = [n_items]
        for _ in range(n_layers):
            widths.append(max(min_width, widths[-1] // 2))
        self.widths = widths

        def block(a, b):
            return [nn.Linear(a, b), nn.BatchNorm1d(b), nn.ReLU(), nn.Dropout(dropout)]

        enc = []
        for a, b in zip(widths[:-1], widths[1:]):
            enc += block(a, b)
        self.encoder = nn.Sequential(*enc)
        back = widths[::-1]
        dec = []
        for a, b in zip(back[:-2], back[1:-1]):
            dec += block(a, b)
        self.decoder_hidden = nn.Sequential(*dec)
        self.output = nn.Linear(back[-2], back[-1])

    def forward(self, templates: torch.Tensor) -> torch.Tensor:
        if templates.shape[-1] != self.n_items:
            raise ValueError(f"template width {templates.shape[-1]} != generator input width {self.n_items}")
        r_min, r_max = self.scale
        x = templates / r_max
        if self.training and x.shape[0] == 1:
            # batch statistics are undefined for one row
            bn = [m for m in self.modules() if isinstance(m, nn.BatchNorm1d)]
            for m in bn:
                m.eval()
            try:
                h = self.decoder_hidden(self.encoder(x))
            finally:
                for m in bn:
                    m.train()
        else:
            h = self.decoder_hidden(self.encoder(x))
        return rescale(self.output(h), r_min, r_max)

    def config(self) -> dict:
        return {
            "n_items": self.n_items,
            "scale": list(self.scale),
            "n_layers": self.n_layers,
            "dropout": self.dropout,
            "min_width": self.min_width,
        }

    def save(self, path):
        return save_state(self, path, {"kind": "rating_generator", **self.config()})

    @classmethod
    def load(cls, path) -> RatingGenerator:
        from .checkpoint import read_state

        meta, _ = read_state(path)
        gen = cls(meta["n_items"], tuple(meta["scale"]), meta["n_layers"], meta["dropout"], meta["min_width"])
        gen.double()
        load_state(gen, path)
        return gen


def reconstruct(templates: TemplateMatrix | np.ndarray, generator: RatingGenerator, train_mode: bool = False) -> np.ndarray:
    rows = templates.rows if isinstance(templates, TemplateMatrix) else np.asarray(templates, dtype=np.float64)
    was_training = generator.training
    generator.train(train_mode)
    dtype = next(generator.parameters()).dtype
    try:
        with torch.no_grad():
            out = generator(torch.as_tensor(rows, dtype=dtype))
    finally:
        generator.train(was_training)
    return out.double().numpy()


def pretrain_generator(
    generator: RatingGenerator,
    ratings,
    *,
    epochs: int = 50,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
) -> list[float]:
    """Fit the autoencoder to reproduce real rating rows (MSE on observed entries only).

    Gives the adversarial stage a generator whose fillers start near the
    template ratings instead of the scale midpoint.
    """
    X = ratings.toarray() if hasattr(ratings, "toarray") else np.asarray(ratings, dtype=np.float64)
    rows = X[(X != 0).any(axis=1)]
    if rows.shape[0] == 0:
        raise ValueError("no nonempty rating rows to pretrain on")
    rng = np.random.default_rng(seed)
    dtype = next(generator.parameters()).dtype
    data = torch.as_tensor(rows, dtype=dtype)
    opt = torch.optim.Adam(generator.parameters(), lr=lr)
    history = []
    generator.train()
    for _ in range(epochs):
        order = rng.permutation(rows.shape[0])
        total = 0.0
        for start in range(0, order.shape[0], batch_size):
            b = data[torch.as_tensor(order[start:start + batch_size])]
            mask = b != 0
            loss = ((generator(b) - b)[mask] ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * b.shape[0]
        history.append(total / rows.shape[0])
    generator.eval()
    return history


def expected_profile_size(template_nnz: int, F: int) -> int:
    return min(F, 1 + template_nnz)


__all__ = [
    "FakeRatingMatrix",
    "RatingGenerator",
    "expected_profile_size",
    "filler_masks",
    "pretrain_generator",
    "prune",
    "prune_ste",
    "reconstruct",
    "rescale",
    "round_off",
    "select_fillers",
]

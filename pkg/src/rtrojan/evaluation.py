"""Promotion metrics, clean-vs-poisoned victim evaluation and report files."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, SplitDataset
from .detector import ProfileDetector, export_representations, profiles_from_dataset, profiles_from_fakes
from .profiles import FakeProfileBatch
from .textcnn import build_vocabulary
from .victims import REVIEW_BASED, fit_victim

__all__ = [
    "EvaluationReport",
    "aggregate_rows",
    "detection_accuracy",
    "evaluate_attack",
    "export_representations",
    "hit_ratio",
    "ndcg",
    "target_users",
    "write_aggregate_csv",
]

AGGREGATE_COLUMNS = (
    "dataset", "attack", "victim", "seed", "A", "F", "K", "hr_before", "hr_after", "ndcg_before", "ndcg_after",
)


def _check_users(topk_lists, users):
    users = list(users)
    if not users:
        raise ValueError("target user set is empty")
    missing = [u for u in users if u not in topk_lists]
    if missing:
        raise KeyError(f"no recommendation list for users {missing[:5]}")
    return users


def hit_ratio(topk_lists, t: int, users) -> float:
    """Share of ``users`` whose list contains ``t``."""
    users = _check_users(topk_lists, users)
    return sum(t in topk_lists[u] for u in users) / len(users)


def ndcg(topk_lists, t: int, users) -> float:
    """Mean ``1 / log2(rank + 1)`` of ``t`` over ``users`` (0 when absent); ideal DCG is 1."""
    users = _check_users(topk_lists, users)
    total = 0.0
    for u in users:
        lst = list(topk_lists[u])
        if t in lst:
            total += 1.0 / math.log2(lst.index(t) + 2)
    return total / len(users)


def target_users(ds: Dataset, t: int) -> list[int]:
    """Real users without a training interaction on ``t``."""
    col = np.asarray(ds.ratings[:, t].todense()).ravel()
    return np.flatnonzero(col == 0).tolist()


@dataclass
class EvaluationReport:
    victim: str
    dataset: str
    attack: str
    A: int
    F: int
    K: int
    hr_before: float
    hr_after: float
    ndcg_before: float
    ndcg_after: float
    seeds: list[int] = field(default_factory=list)
    runtime_seconds: float = 0.0
    target_item: int = -1
    n_target_users: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def from_json(cls, path) -> EvaluationReport:
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def aggregate_row(self) -> dict:
        d = self.to_dict()
        d["seed"] = self.seeds[0] if self.seeds else ""
        return {k: d[k] for k in AGGREGATE_COLUMNS}


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def aggregate_rows(reports) -> list[dict]:
    rows = [r.aggregate_row() for r in reports]
    return sorted(rows, key=lambda r: (r["dataset"], r["attack"], r["victim"], str(r["seed"])))


def write_aggregate_csv(reports, path) -> Path:
    """One row per victim x attack x seed, sorted; runtime excluded so reruns are byte-identical."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for row in aggregate_rows(reports):
            w.writerow([_fmt(row[c]) for c in AGGREGATE_COLUMNS])
    return path


def evaluate_attack(
    data: SplitDataset | Dataset,
    fakes: FakeProfileBatch,
    victim: str,
    *,
    K: int = 10,
    seed: int = 0,
    victim_params: dict | None = None,
    dataset_name: str = "",
    attack_name: str | None = None,
    filler_size: int | None = None,
) -> EvaluationReport:
    """Train ``victim`` on clean and on poisoned training data (same seed) and compare HR/NDCG@K."""
    start = time.perf_counter()
    train = data.train if isinstance(data, SplitDataset) else data
    t = int(fakes.target_item)
    if not 0 <= t < train.n_items:
        raise ValueError(f"fake batch target item {t} out of range")
    users = target_users(train, t)
    params = dict(victim_params or {})
    clean = fit_victim(victim, train, seed, **params)
    before = clean.topk_lists(users, K)
    if fakes.n_profiles:
        poisoned = fit_victim(victim, fakes.inject(train), seed, **params)
        after = poisoned.topk_lists(users, K)
    else:
        after = before
    sizes = fakes.profile_sizes()
    F = filler_size if filler_size is not None else (int(sizes.max()) if sizes.size else 0)
    return EvaluationReport(
        victim=victim,
        dataset=dataset_name,
        attack=attack_name if attack_name is not None else fakes.attack,
        A=fakes.n_profiles,
        F=F,
        K=K,
        hr_before=hit_ratio(before, t, users),
        hr_after=hit_ratio(after, t, users),
        ndcg_before=ndcg(before, t, users),
        ndcg_after=ndcg(after, t, users),
        seeds=[seed],
        runtime_seconds=time.perf_counter() - start,
        target_item=t,
        n_target_users=len(users),
    )


def detection_accuracy(
    data: SplitDataset | Dataset,
    fakes: FakeProfileBatch,
    seed: int = 0,
    *,
    dim: int = 16,
    n_filters: int = 16,
    word_dim: int = 32,
    doc_len: int = 100,
    steps: int = 200,
    batch_size: int | None = None,
    learning_rate: float = 1e-3,
) -> float:
    """Held-out balanced accuracy of a freshly trained detector, real vs ``fakes``.

    Real and fake profiles are each split 50/50 (seeded) into train/test; the
    score averages the accuracy on held-out real and held-out fake profiles.
    """
    train = data.train if isinstance(data, SplitDataset) else data
    if fakes.n_profiles < 2:
        raise ValueError("need at least two fake profiles to hold some out")
    rng = np.random.default_rng(seed)
    vocab, emb = build_vocabulary(train, "random", word_dim, seed, extra_texts=list(fakes.reviews.values()))
    real = profiles_from_dataset(train, vocab, emb, doc_len=doc_len)
    fake = profiles_from_fakes(fakes, vocab, emb, doc_len)

    def halves(n):
        perm = rng.permutation(n)
        return perm[: n // 2], perm[n // 2:]

    r_tr, r_te = halves(len(real))
    f_tr, f_te = halves(len(fake))
    X_train = real.take(r_tr).concat(fake.take(f_tr))
    y_train = np.r_[np.ones(len(r_tr)), np.zeros(len(f_tr))]
    det = ProfileDetector(dim, n_filters, 3, train.scale[1], steps, batch_size, learning_rate, seed).fit(X_train, y_train)
    acc_real = float(np.mean(det.predict(real.take(r_te)) == 1))
    acc_fake = float(np.mean(det.predict(fake.take(f_te)) == 0))
    return 0.5 * (acc_real + acc_fake)


def is_review_based(victim: str) -> bool:
    return victim in REVIEW_BASED

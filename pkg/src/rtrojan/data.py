"""Review corpora, indexed datasets, leave-one-out splits and word embeddings."""

from __future__ import annotations

import json
import logging
import re
import zlib
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .validation import check_scale

logger = logging.getLogger(__name__)

TOKEN_RE = re.compile(r"\w+|[^\w\s]")
DEFAULT_REVIEW_TOKENS = 100


@dataclass(frozen=True)
class RawInteraction:
    user_external_id: str
    item_external_id: str
    rating: float
    review_text: str = ""
    timestamp: int | None = None


@dataclass(frozen=True)
class ItemAttributes:
    item_external_id: str
    name: str
    categories: frozenset[str] = frozenset()


@dataclass(frozen=True, eq=False)
class Dataset:
    """Indexed explicit-feedback dataset with review text and item attributes.

    ``ratings`` is an ``m x n`` CSR matrix where 0 means "no interaction".
    ``reviews`` has a key for every stored rating (the text may be empty).
    """

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    ratings: sp.csr_matrix
    reviews: Mapping[tuple[int, int], str]
    attributes: tuple[ItemAttributes, ...]
    scale: tuple[int, int]
    timestamps: Mapping[tuple[int, int], int] = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {u: k for k, u in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {i: k for k, i in enumerate(self.item_ids)}

    def items_of(self, u: int) -> np.ndarray:
        row = self.ratings
        return row.indices[row.indptr[u]:row.indptr[u + 1]]

    def interactions(self) -> list[tuple[int, int, float]]:
        coo = self.ratings.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[k]), int(coo.col[k]), float(coo.data[k])) for k in order]

    def with_ratings(self, ratings: sp.csr_matrix) -> Dataset:
        """Copy restricted to the nonzeros of ``ratings`` (same index space)."""
        ratings = sp.csr_matrix(ratings)
        ratings.eliminate_zeros()
        keep = set(zip(*(a.tolist() for a in ratings.nonzero())))
        return Dataset(
            user_ids=self.user_ids,
            item_ids=self.item_ids,
            ratings=ratings,
            reviews={k: v for k, v in self.reviews.items() if k in keep},
            attributes=self.attributes,
            scale=self.scale,
            timestamps={k: v for k, v in self.timestamps.items() if k in keep},
        )


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    validation: tuple[tuple[int, int, float], ...]
    test: Mapping[int, int]

    @property
    def n_interactions(self) -> int:
        return self.train.ratings.nnz + len(self.validation) + len(self.test)


@dataclass(frozen=True)
class EmbeddingTable:
    dimension: int
    vectors: Mapping[str, np.ndarray]
    oov_policy: str = "uniform(-0.1, 0.1) seeded per token"

    def matrix(self, tokens: Iterable[str]) -> np.ndarray:
        return np.stack([self.vectors[t] for t in tokens]) if tokens else np.zeros((0, self.dimension))


def tokenize(text: str, max_tokens: int | None = DEFAULT_REVIEW_TOKENS) -> list[str]:
    tokens = TOKEN_RE.findall(text.lower())
    return tokens if max_tokens is None else tokens[:max_tokens]


# ---------------------------------------------------------------- ingestion

def _parse_yelp_date(value) -> int | None:
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return int(value)
    for fmt in ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d"):
        try:
            return int(datetime.strptime(value, fmt).replace(tzinfo=timezone.utc).timestamp())
        except ValueError:
            continue
    return None


_FIELDS = {
    "amazon-json-lines": ("reviewerID", "asin", "overall", "reviewText", "unixReviewTime"),
    "yelp-json": ("user_id", "business_id", "stars", "text", "date"),
}


def _iter_json_records(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError:
                yield lineno, None


def load_review_corpus(path, format: str = "amazon-json-lines", *, return_skipped: bool = False):
    """Read a JSON-lines review dump into ``RawInteraction`` records, in file order.

    Records without a user id, item id or rating are skipped with a warning.
    """
    if format in ("amazon", "amazon-json"):
        format = "amazon-json-lines"
    if format == "yelp":
        format = "yelp-json"
    if format not in _FIELDS:
        raise ValueError(f"unknown corpus format {format!r}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"review corpus not found: {path}")
    uf, itf, rf, tf, tsf = _FIELDS[format]
    out: list[RawInteraction] = []
    skipped = 0
    for lineno, rec in _iter_json_records(path):
        if not isinstance(rec, dict) or rec.get(uf) is None or rec.get(itf) is None or rec.get(rf) is None:
            skipped += 1
            logger.warning("%s:%d: skipping malformed record", path, lineno)
            continue
        ts = rec.get(tsf)
        ts = _parse_yelp_date(ts) if format == "yelp-json" else (int(ts) if ts is not None else None)
        out.append(RawInteraction(str(rec[uf]), str(rec[itf]), float(rec[rf]), rec.get(tf) or "", ts))
    if return_skipped:
        return out, skipped
    return out


def load_item_metadata(path, format: str = "amazon-json-lines") -> list[ItemAttributes]:
    """Amazon metadata (asin/title/category) or Yelp business records (business_id/name/categories)."""
    out = []
    yelp = format in ("yelp", "yelp-json")
    for lineno, rec in _iter_json_records(Path(path)):
        if not isinstance(rec, dict):
            logger.warning("%s:%d: skipping malformed metadata", path, lineno)
            continue
        if yelp:
            iid, name, cats = rec.get("business_id"), rec.get("name"), rec.get("categories") or ""
            cats = [c.strip() for c in cats.split(",")] if isinstance(cats, str) else list(cats)
        else:
            iid, name, cats = rec.get("asin"), rec.get("title"), rec.get("category") or []
            if cats and isinstance(cats[0], list):  # older dumps nest category paths
                cats = [c for path_ in cats for c in path_]
        if iid is None:
            continue
        out.append(ItemAttributes(str(iid), name or str(iid), frozenset(c for c in cats if c)))
    return out


def sample_users(raw: list[RawInteraction], n_users: int, seed: int) -> list[RawInteraction]:
    """Seeded uniform user subsample (used to cut Yelp down to desk scale)."""
    users = sorted({r.user_external_id for r in raw})
    if n_users >= len(users):
        return list(raw)
    rng = np.random.default_rng(seed)
    keep = set(rng.choice(users, size=n_users, replace=False).tolist())
    return [r for r in raw if r.user_external_id in keep]


def build_dataset(
    raw: list[RawInteraction],
    attrs: Iterable[ItemAttributes] = (),
    scale=(1, 5),
    *,
    min_user_interactions: int = 1,
    item_order: Iterable[str] | None = None,
) -> Dataset:
    """Index raw interactions in first-appearance order.

    Duplicate (user, item) pairs keep the last record.  Ratings outside ``scale``
    raise instead of being clipped.  ``item_order`` pins the leading item
    indices (items listed there are kept even without interactions).
    """
    r_min, r_max = check_scale(scale)
    last: dict[tuple[str, str], RawInteraction] = {}
    for rec in raw:
        if not r_min <= rec.rating <= r_max:
            raise ValueError(f"rating {rec.rating} outside scale {(r_min, r_max)}: {rec}")
        key = (rec.user_external_id, rec.item_external_id)
        last.pop(key, None)  # re-insert so iteration reflects the last occurrence
        last[key] = rec
    if min_user_interactions > 1:
        counts: dict[str, int] = {}
        for u, _ in last:
            counts[u] = counts.get(u, 0) + 1
        last = {k: v for k, v in last.items() if counts[k[0]] >= min_user_interactions}

    users: dict[str, int] = {}
    items: dict[str, int] = {}
    for ie in item_order or ():
        items.setdefault(ie, len(items))
    for rec in raw:  # first-appearance order over the original stream
        key = (rec.user_external_id, rec.item_external_id)
        if key in last:
            users.setdefault(rec.user_external_id, len(users))
            items.setdefault(rec.item_external_id, len(items))
    if not users or not items:
        raise ValueError("dataset has no interactions")

    rows, cols, vals = [], [], []
    reviews, stamps = {}, {}
    for (ue, ie), rec in last.items():
        u, i = users[ue], items[ie]
        rows.append(u)
        cols.append(i)
        vals.append(rec.rating)
        reviews[(u, i)] = rec.review_text
        if rec.timestamp is not None:
            stamps[(u, i)] = rec.timestamp
    ratings = sp.csr_matrix((vals, (rows, cols)), shape=(len(users), len(items)), dtype=np.float64)
    ratings.sort_indices()

    by_id = {a.item_external_id: a for a in attrs}
    attributes = []
    for ie in items:
        a = by_id.get(ie)
        if a is None:
            logger.warning("item %s has no attributes; defaulting name to its id", ie)
            a = ItemAttributes(ie, ie, frozenset())
        attributes.append(a)
    return Dataset(tuple(users), tuple(items), ratings, reviews, tuple(attributes), (r_min, r_max), stamps)


def dataset_stats(ds: Dataset) -> tuple[int, int, int, float]:
    return sparsity_stats(ds.n_users, ds.n_items, ds.ratings.nnz)


def sparsity_stats(m: int, n: int, interactions: int) -> tuple[int, int, int, float]:
    return m, n, interactions, round(1.0 - interactions / (m * n), 4)


def leave_one_out_split(ds: Dataset, seed: int = 0, *, validation_ratio: float = 0.1) -> SplitDataset:
    """Hold out one interaction per user for test, then split the rest 9:1 train:validation.

    The test item is the latest one when timestamps exist, otherwise a seeded
    uniform pick.  Users with a single interaction stay entirely in train.
    """
    rng = np.random.default_rng(seed)
    keep_rows, keep_cols, keep_vals = [], [], []
    validation = []
    test: dict[int, int] = {}
    for u in range(ds.n_users):
        lo, hi = ds.ratings.indptr[u], ds.ratings.indptr[u + 1]
        items = ds.ratings.indices[lo:hi].tolist()
        vals = ds.ratings.data[lo:hi].tolist()
        rest = list(range(len(items)))
        if len(items) >= 2:
            stamps = [ds.timestamps.get((u, i)) for i in items]
            if all(s is not None for s in stamps):
                pick = max(rest, key=lambda k: (stamps[k], items[k]))
            else:
                pick = int(rng.integers(len(items)))
            test[u] = items[pick]
            rest.remove(pick)
            n_val = int(round(validation_ratio * len(rest)))
            n_val = min(n_val, len(rest) - 1)
            held = set(rng.permutation(rest)[:n_val].tolist()) if n_val > 0 else set()
        else:
            held = set()
        for k in rest:
            if k in held:
                validation.append((u, items[k], vals[k]))
            else:
                keep_rows.append(u)
                keep_cols.append(items[k])
                keep_vals.append(vals[k])
    train = sp.csr_matrix((keep_vals, (keep_rows, keep_cols)), shape=ds.ratings.shape)
    return SplitDataset(ds.with_ratings(train), tuple(validation), test)


def _oov_vector(token: str, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, zlib.crc32(token.encode("utf-8"))])
    return rng.uniform(-0.1, 0.1, size=dim)


def load_word_embeddings(path, dim: int, vocab: Iterable[str], seed: int = 0) -> EmbeddingTable:
    """word2vec text-format vectors for ``vocab``; missing tokens get seeded uniform vectors.

    ``path="random"`` skips the file and draws every vector (test fallback).
    OOV vectors depend only on ``(token, seed)``, not on vocabulary order.
    """
    if dim <= 0:
        raise ValueError("embedding dimension must be positive")
    wanted = set(vocab)
    vectors: dict[str, np.ndarray] = {}
    if str(path) != "random":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) == 2 and int(header[1]) != dim:
                raise ValueError(f"embedding file has dimension {header[1]}, expected {dim}")
            for line in fh:
                parts = line.rstrip().split(" ")
                if parts[0] not in wanted:
                    continue
                if len(parts) - 1 != dim:
                    raise ValueError(f"vector for {parts[0]!r} has {len(parts) - 1} values, expected {dim}")
                vectors[parts[0]] = np.asarray(parts[1:], dtype=np.float64)
    for tok in sorted(wanted - vectors.keys()):
        vectors[tok] = _oov_vector(tok, dim, seed)
    return EmbeddingTable(dim, vectors)


def binarize(ratings) -> sp.csr_matrix:
    out = sp.csr_matrix(ratings, dtype=np.float64, copy=True)
    out.eliminate_zeros()
    out.data[:] = 1.0
    return out


def write_dataset_dir(ds: Dataset, directory) -> Path:
    """``reviews.jsonl`` (Amazon field names), ``items.jsonl`` and ``dataset.json`` (scale, stats)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "reviews.jsonl", "w", encoding="utf-8") as fh:
        for u, i, r in ds.interactions():
            rec = {"reviewerID": ds.user_ids[u], "asin": ds.item_ids[i], "overall": r, "reviewText": ds.reviews.get((u, i), "")}
            if (u, i) in ds.timestamps:
                rec["unixReviewTime"] = int(ds.timestamps[(u, i)])
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(directory / "items.jsonl", "w", encoding="utf-8") as fh:
        for a in ds.attributes:
            fh.write(json.dumps({"asin": a.item_external_id, "title": a.name, "category": sorted(a.categories)}) + "\n")
    m, n, k, sparsity = dataset_stats(ds)
    meta = {"scale": list(ds.scale), "users": m, "items": n, "interactions": k, "sparsity": sparsity}
    (directory / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def load_dataset_dir(directory) -> Dataset:
    directory = Path(directory)
    meta_path = directory / "dataset.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"not a dataset directory (missing dataset.json): {directory}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    attrs = load_item_metadata(directory / "items.jsonl")
    raw = load_review_corpus(directory / "reviews.jsonl")
    return build_dataset(raw, attrs, tuple(meta["scale"]), item_order=[a.item_external_id for a in attrs])

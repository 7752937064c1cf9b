"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np
import scipy.sparse as sp
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_random_state  # noqa: F401  re-exported


def check_scale(scale) -> tuple[int, int]:
    r_min, r_max = scale
    if int(r_min) != r_min or int(r_max) != r_max:
        raise ValueError(f"scale bounds must be integers, got {scale!r}")
    if not r_min < r_max:
        raise ValueError(f"scale must satisfy r_min < r_max, got {scale!r}")
    return int(r_min), int(r_max)


def check_interactions(X, *, name="X") -> sp.csr_matrix:
    """Coerce ``X`` (a Dataset, sparse or dense matrix) to a CSR float matrix."""
    from .data import Dataset

    if isinstance(X, Dataset):
        X = X.ratings
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64)
    else:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"{name} must be 2-dimensional, got shape {X.shape}")
        X = sp.csr_matrix(X)
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"{name} is empty: shape {X.shape}")
    if not np.all(np.isfinite(X.data)):
        raise ValueError(f"{name} contains non-finite entries")
    X.eliminate_zeros()
    return X


def check_dataset(X, *, estimator=None):
    from .data import Dataset

    if not isinstance(X, Dataset):
        who = type(estimator).__name__ if estimator is not None else "this estimator"
        raise TypeError(f"{who} needs a Dataset with review text, got {type(X).__name__}")
    return X


def check_fitted(estimator, attr: str):
    if not hasattr(estimator, attr):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call 'fit' first."
        )


def check_positive_int(value, name: str, *, minimum: int = 1) -> int:
    if not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_finite_loss(loss: float, where: str, **diagnostics):
    if not np.isfinite(loss):
        detail = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
        raise FloatingPointError(f"non-finite loss in {where}" + (f" ({detail})" if detail else ""))

"""Input validation helpers shared by the estimators and functional APIs."""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError


def check_scores(scores) -> np.ndarray:
    """1-d finite float array with every entry in [0, 1]."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(s)):
        raise ContractError("scores must be finite")
    if s.size and (s.min() < 0.0 or s.max() > 1.0):
        raise ContractError("scores must lie in [0, 1]")
    return s


def check_logits(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ContractError(f"logits must have shape [n, K] with K >= 2, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ContractError("logits must be finite")
    return z


def check_features(X, n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError(f"expected a 2-d feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ContractError("features must be finite")
    if n_features is not None and X.shape[1] != n_features:
        raise ContractError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y).reshape(-1)
    if len(y) != n:
        raise ContractError(f"{n} samples but {len(y)} labels")
    if y.dtype.kind == "f":
        if not np.all(np.mod(y, 1) == 0):
            raise ContractError("labels must be integer valued")
    return y.astype(np.int64)

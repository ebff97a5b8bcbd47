"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .corpus import TASKS
from .errors import ContractError, ShapeError


def check_waveforms(X) -> list[np.ndarray]:
    """A list of 1-D finite sample arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 1:
        X = [X]
    out = []
    for i, x in enumerate(X):
        a = np.asarray(x, dtype=np.float64)
        if a.ndim != 1:
            raise ShapeError(f"waveform {i} must be 1-D, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise ContractError(f"waveform {i} contains non-finite samples")
        out.append(a)
    return out


def check_features(X, num_bins: int = 80) -> list[np.ndarray]:
    """A list of finite (T, num_bins) matrices; a 3-D array is split along axis 0."""
    if isinstance(X, np.ndarray):
        if X.ndim == 2:
            X = [X]
        elif X.ndim == 3:
            X = list(X)
        else:
            raise ShapeError(f"expected (T, {num_bins}) matrices or a (n, T, {num_bins}) array, got shape {X.shape}")
    out = []
    for i, f in enumerate(X):
        a = np.asarray(f, dtype=np.float32)
        if a.ndim != 2 or a.shape[1] != num_bins:
            raise ShapeError(f"clip {i}: expected (T, {num_bins}) features, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise ContractError(f"clip {i}: features contain non-finite values")
        out.append(a)
    if not out:
        raise ContractError("no clips given")
    return out


def check_labels(y, n: int, tasks: Sequence[str] = TASKS) -> np.ndarray:
    """(n, 5) 0/1 matrix in canonical order, or (n, len(tasks)) for a subset."""
    a = np.asarray(y)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != n:
        raise ShapeError(f"{a.shape[0]} label rows for {n} clips")
    if a.shape[1] not in (5, len(tasks)):
        raise ShapeError(f"labels need 5 columns (or {len(tasks)} for the active tasks), got {a.shape[1]}")
    if a.size and not np.isin(a, (0, 1)).all():
        raise ContractError("labels must be 0 or 1")
    a = a.astype(np.int64)
    if a.shape[1] == 5:
        return a
    full = np.zeros((n, 5), dtype=np.int64)
    full[:, [TASKS.index(t) for t in tasks]] = a
    return full

"""Input validation helpers used by the public entry points."""

from __future__ import annotations

import numpy as np

from .errors import InputError


def as_float_vector(x, name: str, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float array, optionally of fixed length."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise InputError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise InputError(f"{name} must have length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return arr


def as_float_matrix(X, name: str, n_cols: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-D float array of shape (n_samples, n_features)."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InputError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise InputError(f"{name} must have {n_cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return arr


def check_positive(value, name: str, allow_inf: bool = False) -> float:
    val = float(value)
    if np.isnan(val) or val <= 0 or (not allow_inf and np.isinf(val)):
        raise InputError(f"{name} must be a positive finite real, got {value!r}")
    return val


def check_nonnegative(value, name: str) -> float:
    val = float(value)
    if not np.isfinite(val) or val < 0:
        raise InputError(f"{name} must be a nonnegative finite real, got {value!r}")
    return val


def check_probability(value, name: str) -> float:
    val = float(value)
    if not np.isfinite(val) or not 0.0 < val < 1.0:
        raise InputError(f"{name} must lie strictly inside (0, 1), got {value!r}")
    return val


def check_positive_int(value, name: str) -> int:
    if not float(value).is_integer():
        raise InputError(f"{name} must be an integer, got {value!r}")
    val = int(value)
    if val <= 0:
        raise InputError(f"{name} must be a positive integer, got {value!r}")
    return val

"""Input validation helpers used across the package."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

EPS_ZERO = 1e-8


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float array, rejecting non-finite values."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name}: expected 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_same_dim(a: np.ndarray, b: np.ndarray, name: str = "vectors") -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


def check_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")


def is_zero_vector(v: np.ndarray) -> bool:
    """True when the vector is absent under the zero-vector convention."""
    return float(np.linalg.norm(v)) < EPS_ZERO

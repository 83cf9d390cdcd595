"""Input validation helpers shared by the estimator, driver, and service."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, OutOfDomain


def check_point(x, n_inputs, name="x"):
    """Coerce to a finite float vector of length n_inputs inside [0,1]^d."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != n_inputs:
        raise DimensionMismatch(
            f"{name} must be a vector of length {n_inputs}, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise OutOfDomain(f"{name} has non-finite entries")
    if np.any(arr < -1e-12) or np.any(arr > 1.0 + 1e-12):
        raise OutOfDomain(f"{name} lies outside the unit box: {arr.tolist()}")
    return np.clip(arr, 0.0, 1.0)


def check_points(X, n_inputs, name="X"):
    """Coerce to a finite (n, d) array inside [0,1]^d."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != n_inputs:
        raise DimensionMismatch(
            f"{name} must have shape (n, {n_inputs}), got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise OutOfDomain(f"{name} has non-finite entries")
    if np.any(arr < -1e-12) or np.any(arr > 1.0 + 1e-12):
        raise OutOfDomain(f"{name} lies outside the unit box")
    return np.clip(arr, 0.0, 1.0)


def check_outputs(y, n_outputs, name="y"):
    """Coerce to a finite float vector of length n_outputs."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 0 and n_outputs == 1:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.shape[0] != n_outputs:
        raise DimensionMismatch(
            f"{name} must be a vector of length {n_outputs}, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise OutOfDomain(f"{name} has non-finite entries")
    return arr

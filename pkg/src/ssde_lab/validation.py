"""Input validation helpers shared by the estimators and free functions."""

import numbers

import numpy as np

from .exceptions import InvalidArgumentError


def check_param_vector(theta, dim=None, name="theta"):
    """Return ``theta`` as a finite 1-D float array, optionally of length ``dim``."""
    arr = np.atleast_1d(np.asarray(theta, dtype=float))
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be a vector, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidArgumentError(f"{name} must have at least one coordinate")
    if dim is not None and arr.size != dim:
        raise InvalidArgumentError(
            f"{name} has dimension {arr.size}, model expects {dim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries: {arr}")
    return arr


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidArgumentError(f"{name} must be a finite real, got {value!r}")
    if strict and value <= 0:
        raise InvalidArgumentError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise InvalidArgumentError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InvalidArgumentError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_box(box, dim):
    """Validate a per-coordinate box given as ``(lower, upper)`` arrays."""
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box)
    if lo.shape != (dim,) or hi.shape != (dim,):
        raise InvalidArgumentError(f"box bounds must both have length {dim}")
    if np.any(~(lo < hi)):
        raise InvalidArgumentError(f"box lower bounds must be below upper bounds: {lo}, {hi}")
    return lo, hi


def check_symmetric(mat, rtol=1e-8, name="matrix"):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got shape {mat.shape}")
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > rtol * scale:
        raise InvalidArgumentError(f"{name} is not symmetric")
    return mat

"""Stable softmax machinery, distribution validation and gradient checking.

Everything works on float64 numpy arrays. Batched variants take 2-D arrays
with one logit vector per row.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionError, InvalidInputError

DIST_TOL = 1e-9


def as_vector(x, name="vector") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def as_distribution(p, tol: float = DIST_TOL, name="distribution") -> np.ndarray:
    """Validate a probability vector and return a read-only renormalized copy.

    Entries must be non-negative and sum to one within ``tol``; small
    deviations are removed by renormalizing, larger ones are rejected.
    """
    arr = as_vector(p, name).copy()
    if np.any(arr < 0):
        k = int(np.argmax(arr < 0))
        raise InvalidInputError(f"{name} has negative mass {arr[k]!r} at index {k}")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise InvalidInputError(f"{name} sums to {total!r}, not 1 within {tol:g}")
    arr /= total
    arr.flags.writeable = False
    return arr


def one_hot(index: int, size: int) -> np.ndarray:
    if not 0 <= index < size:
        raise InvalidInputError(f"index {index} out of range for size {size}")
    e = np.zeros(size)
    e[index] = 1.0
    return e


def _check_finite(z):
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits contain non-finite entries")


def softmax(z) -> np.ndarray:
    """Softmax along the last axis, shifted by the max for stability."""
    z = np.asarray(z, dtype=np.float64)
    _check_finite(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    _check_finite(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def grad_check(
    f: Callable[[np.ndarray], float],
    grad_f: Callable[[np.ndarray], np.ndarray],
    x,
    h: float = 1e-5,
) -> float:
    """Max relative error between ``grad_f(x)`` and central differences of ``f``.

    Each coordinate's error is ``|g_i - fd_i| / (|g_i| + 1e-8)``.
    """
    if h <= 0:
        raise InvalidInputError("step h must be positive")
    x = as_vector(x, "x")
    g = np.asarray(grad_f(x), dtype=np.float64)
    if g.shape != x.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match x shape {x.shape}")
    worst = 0.0
    xp = x.copy()
    for i in range(x.size):
        xp[i] = x[i] + h
        fp = f(xp)
        xp[i] = x[i] - h
        fm = f(xp)
        xp[i] = x[i]
        fd = (fp - fm) / (2 * h)
        worst = max(worst, abs(g[i] - fd) / (abs(g[i]) + 1e-8))
    return worst

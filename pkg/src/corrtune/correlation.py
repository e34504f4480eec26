"""Tie-aware rank statistics: mean-rank ranking, Spearman's rho, Pearson's r.

Conventions
-----------
* Ranks are 1-based. Tied entries receive the mean of the positions they
  jointly occupy, so the rank total is always exactly n(n+1)/2.
* ``spearman`` is the Pearson correlation of the two mean-rank vectors.
  For tie-free inputs this coincides with the rank-difference formula
  ``1 - 6*sum(d_i^2) / (n(n^2-1))``; with ties the two differ, and the
  rank-Pearson form is the one computed here. The difference formula is
  kept only as a test oracle for tie-free data.
* ``pearson`` uses population (1/n) covariance and deviations. The
  normalization cancels in the ratio, but gradients elsewhere are derived
  against this convention, so it is fixed here.

Zero variance raises ``DegenerateInput`` instead of returning NaN: a NaN
would propagate silently through a training loop and poison it.

All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, InvalidInput

__all__ = ["RankedVector", "compute_ranks", "spearman", "pearson"]


@dataclass(frozen=True)
class RankedVector:
    """A real vector together with its 1-based mean ranks."""

    values: np.ndarray
    ranks: np.ndarray


def as_finite_vector(x, name: str) -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting empty or non-finite input."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidInput(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidInput(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return arr


def compute_ranks(values) -> RankedVector:
    """Rank a vector, assigning each tie group the mean of its positions.

    The result is independent of the input order of equal values: every
    member of a tie group receives the same rank. Ranks are half-integers
    at worst (means of consecutive integer runs), hence exact in float64.
    """
    arr = as_finite_vector(values, "values")
    n = arr.size
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return RankedVector(values=arr, ranks=ranks)


def _paired(x, y) -> tuple[np.ndarray, np.ndarray]:
    a = as_finite_vector(x, "x")
    b = as_finite_vector(y, "y")
    if a.size != b.size:
        raise InvalidInput(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise InvalidInput("need at least two observations")
    return a, b


def _centered_correlation(a: np.ndarray, b: np.ndarray, what: str) -> float:
    ac = a - a.mean()
    bc = b - b.mean()
    va = float(ac @ ac)
    vb = float(bc @ bc)
    if va == 0.0 or vb == 0.0:
        raise DegenerateInput(f"zero {what} variance")
    return float((ac @ bc) / math.sqrt(va * vb))


def pearson(x, y) -> float:
    """Pearson's r = cov(x, y) / (sigma_x * sigma_y), population convention."""
    a, b = _paired(x, y)
    return _centered_correlation(a, b, "value")


def spearman(x, y) -> float:
    """Spearman's rho: Pearson correlation of the mean-rank vectors."""
    a, b = _paired(x, y)
    ra = compute_ranks(a).ranks
    rb = compute_ranks(b).ranks
    return _centered_correlation(ra, rb, "rank")

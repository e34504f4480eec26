"""The Spearman ceiling of an inversion-free binary predictor.

Setting: n items carry strictly decreasing gold scores (gold ranks are
tie-free by construction). A binary predictor labels the top k items
positive and the remaining n-k negative, with no inversions; the k
positive predictions tie with each other, as do the n-k negatives, and
mean ranks are substituted. Plugging the squared rank differences into
``rho = 1 - 6*sum(d_i^2) / (n(n^2-1))`` gives a ceiling that is
``(7n^2-4) / (8(n^2-1))`` at the optimal k = n/2 for even n, is exactly
7/8 for every odd n, and decreases to 7/8 as n grows.

Two tie conventions meet in this module and must not be conflated:

* The ceiling algebra above substitutes mean ranks into the tie-free
  difference formula. ``sum_d_sq_*``, ``max_spearman`` and
  ``BoundAnalysis.rho`` live in this convention.
* ``binary_predictor_spearman`` reports what an evaluation harness would
  report: the tie-corrected rank-Pearson statistic from
  :mod:`corrtune.correlation`. For a two-valued prediction vector that
  statistic reduces to a point-biserial correlation bounded by
  ``sqrt(3k(n-k)/(n^2-1)) <= sqrt(3)/2 * n/sqrt(n^2-1)``, which is below
  the ceiling for every n > 2 and equal to it at n = 2. Dominance of the
  ceiling therefore holds under either reading.

Closed forms are evaluated in exact integer/rational arithmetic
(``fractions.Fraction`` over Python ints, so n up to 1e6 cannot
overflow) and converted to float only at the API boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from collections.abc import Iterable, Sequence

import numpy as np

from .correlation import as_finite_vector, compute_ranks, spearman
from .errors import DegenerateInput, InvalidInput

__all__ = [
    "BoundAnalysis",
    "BoundRow",
    "sum_d_sq_closed",
    "sum_d_sq_closed_exact",
    "sum_d_sq_bruteforce",
    "sum_d_sq_bruteforce_exact",
    "sum_d_sq_centered_exact",
    "rho_from_sum_d_sq_exact",
    "optimal_k",
    "max_spearman",
    "max_spearman_exact",
    "analyze_split",
    "binary_predictor_spearman",
    "bound_sweep",
]

# int64 accumulation in the brute force stays exact up to this size
_BRUTEFORCE_MAX_N = 2_000_000


def _check_n(n: int) -> None:
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise InvalidInput(f"n must be an integer, got {type(n).__name__}")
    if n < 2:
        raise InvalidInput(f"n must be >= 2, got {n}")


def _check_nk(n: int, k: int) -> None:
    _check_n(n)
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise InvalidInput(f"k must be an integer, got {type(k).__name__}")
    if not 1 <= k <= n - 1:
        raise InvalidInput(f"k must be in [1, {n - 1}], got {k}")


@dataclass(frozen=True)
class BoundAnalysis:
    """One (n, k) split of the inversion-free binary predictor.

    ``rho`` is the rank-difference-formula value for this split; it never
    exceeds ``max_spearman(n)``.
    """

    n: int
    k: int
    sum_d_sq: float
    rho: float


@dataclass(frozen=True)
class BoundRow:
    """One row of a ceiling sweep: best split and resulting ceiling."""

    n: int
    k_star: int
    min_sum_d_sq: float
    max_rho: float


def sum_d_sq_closed_exact(n: int, k: int) -> Fraction:
    """Exact sum of squared rank differences for the (n, k) split.

    Equals ``n(n+1)(2n+1)/6 + (n/4)(k^2 - nk - (n+1)^2)``.
    """
    _check_nk(n, k)
    n = int(n)
    k = int(k)
    square_total = n * (n + 1) * (2 * n + 1) // 6
    return square_total + Fraction(n, 4) * (k * k - n * k - (n + 1) ** 2)


def sum_d_sq_closed(n: int, k: int) -> float:
    return float(sum_d_sq_closed_exact(n, k))


def sum_d_sq_bruteforce_exact(n: int, k: int) -> Fraction:
    """Sum of squared rank differences computed from actual rank vectors.

    Builds strictly decreasing gold scores and the k-ones/(n-k)-zeros
    prediction vector, ranks both by descending value through
    :func:`corrtune.correlation.compute_ranks` (so the k positives share
    mean rank (k+1)/2 and the negatives share (k+n+1)/2), and sums the
    squared differences elementwise. Mean ranks are half-integers, exact
    in float64, so doubling them moves the whole sum into int64.
    """
    _check_nk(n, k)
    n = int(n)
    k = int(k)
    if n > _BRUTEFORCE_MAX_N:
        raise InvalidInput(f"brute force supports n <= {_BRUTEFORCE_MAX_N}, got {n}")
    gold = np.arange(n, 0, -1, dtype=np.float64)
    preds = np.concatenate([np.ones(k), np.zeros(n - k)])
    # rank by descending value: most similar item gets rank 1
    pred_ranks = compute_ranks(-preds).ranks
    gold_ranks = compute_ranks(-gold).ranks
    twice_d = np.rint(2.0 * (pred_ranks - gold_ranks)).astype(np.int64)
    return Fraction(int(np.sum(twice_d * twice_d, dtype=np.int64)), 4)


def sum_d_sq_bruteforce(n: int, k: int) -> float:
    return float(sum_d_sq_bruteforce_exact(n, k))


def sum_d_sq_centered_exact(n: int, k: int) -> Fraction:
    """The centered rearrangement ``sum_i (i - (k+1)/2)^2 - n^2(n-k)/4``.

    An intermediate algebraic form of the same quantity; kept as an
    independent cross-check of :func:`sum_d_sq_closed_exact`. Computed by
    literal summation, not by reusing the closed form.
    """
    _check_nk(n, k)
    n = int(n)
    k = int(k)
    half = Fraction(k + 1, 2)
    total = sum((Fraction(i) - half) ** 2 for i in range(1, n + 1))
    return total - Fraction(n * n * (n - k), 4)


def rho_from_sum_d_sq_exact(n: int, sum_d_sq: Fraction) -> Fraction:
    """Rank-difference formula: ``1 - 6*sum_d_sq / (n(n^2-1))``."""
    _check_n(n)
    n = int(n)
    return 1 - Fraction(6) * Fraction(sum_d_sq) / (n * (n * n - 1))


def optimal_k(n: int) -> set[int]:
    """All integer k in [1, n-1] minimizing k^2 - nk (hence sum_d_sq).

    The real minimizer of the parabola is n/2; for even n the integer
    minimum is unique at n/2, for odd n the two neighbours (n-1)/2 and
    (n+1)/2 attain it jointly.
    """
    _check_n(n)
    n = int(n)
    if n % 2 == 0:
        ks = {n // 2}
    else:
        ks = {(n - 1) // 2, (n + 1) // 2}
    return {k for k in ks if 1 <= k <= n - 1}


def max_spearman_exact(n: int) -> Fraction:
    """Ceiling of the rank-difference rho over all admissible splits.

    Even n: ``(7n^2 - 4) / (8(n^2 - 1))``, strictly decreasing toward 7/8.
    Odd n: the maximum over both optimal splits, which works out to
    exactly 7/8 for every odd n.
    """
    _check_n(n)
    n = int(n)
    if n % 2 == 0:
        return Fraction(7 * n * n - 4, 8 * (n * n - 1))
    return max(
        rho_from_sum_d_sq_exact(n, sum_d_sq_closed_exact(n, k)) for k in optimal_k(n)
    )


def max_spearman(n: int) -> float:
    return float(max_spearman_exact(n))


def analyze_split(n: int, k: int) -> BoundAnalysis:
    """Full record for one split: sum of squared differences and its rho."""
    d2 = sum_d_sq_closed_exact(n, k)
    return BoundAnalysis(
        n=int(n),
        k=int(k),
        sum_d_sq=float(d2),
        rho=float(rho_from_sum_d_sq_exact(n, d2)),
    )


def binary_predictor_spearman(predictions, gold) -> float:
    """Tie-corrected Spearman between binary predictions and tie-free gold.

    Delegates to :func:`corrtune.correlation.spearman`, i.e. reports the
    rank-Pearson statistic. Gold must be tie-free (the rank construction
    above assumes strictly ordered gold); predictions must take at most
    two distinct values and must not be constant.
    """
    preds = as_finite_vector(predictions, "predictions")
    g = as_finite_vector(gold, "gold")
    if preds.size != g.size:
        raise InvalidInput(f"length mismatch: {preds.size} vs {g.size}")
    if preds.size < 2:
        raise InvalidInput("need at least two observations")
    levels = np.unique(preds)
    if levels.size > 2:
        raise InvalidInput(f"predictions must be binary, found {levels.size} levels")
    if levels.size == 1:
        raise DegenerateInput("all predictions identical")
    if np.unique(g).size != g.size:
        raise InvalidInput("gold scores must be tie-free")
    return spearman(preds, g)


def bound_sweep(n_values: Iterable[int] | Sequence[int]) -> list[BoundRow]:
    """One ceiling row per n: best split, minimal sum_d_sq, max rho.

    For n <= 1000 every row is cross-checked against the brute-force
    rank construction; a mismatch would be an internal defect. Rows come
    back in input order. For odd n the reported k_star is the lower of
    the two optimal splits.
    """
    rows: list[BoundRow] = []
    for n in n_values:
        _check_n(n)
        n = int(n)
        k_star = min(optimal_k(n))
        d2 = sum_d_sq_closed_exact(n, k_star)
        if n <= 1000 and sum_d_sq_bruteforce_exact(n, k_star) != d2:
            raise RuntimeError(
                f"closed form and brute force disagree at n={n}, k={k_star}"
            )
        rows.append(
            BoundRow(
                n=n,
                k_star=k_star,
                min_sum_d_sq=float(d2),
                max_rho=float(max_spearman_exact(n)),
            )
        )
    return rows

"""Training objectives: in-batch contrastive loss, its hard-negative
extension, and the correlation loss, each with analytic gradients.

The contrastive objective for a batch of N (anchor, positive) embedding
pairs averages, over anchors i,

    -log( exp(cos(a_i, p_i)/tau) / Z_i ),   Z_i = sum_j exp(cos(a_i, p_j)/tau),

and the extended variant adds exp(cos(a_i, n_j)/tau) terms to Z_i for a
batch of hard negatives n_j. Log-sum-exp is stabilized by row-max
subtraction, so temperatures down to 1e-3 cannot overflow.

The correlation loss on a batch of predicted cosines X against gold
scores Y is ``1 - cov(X, Y) / (sigma_X * sigma_Y)`` in [0, 2], computed
with population (1/N) statistics; its gradient w.r.t. X is orthogonal to
the all-ones vector because the loss is shift-invariant.

Variance guard: gold scores with (near-)zero variance are always an
error, since a constant-gold batch is a construction bug. For the
predicted cosines the caller chooses ``guard="strict"`` (raise, the
default) or ``guard="train"``, where sigma_X is smoothed to
``sqrt(var_X + eps^2)`` with eps = 1e-8 so that a momentarily collapsed
batch cannot crash a training run. The gradient uses the same smoothing,
so it stays the exact derivative of the guarded loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .correlation import as_finite_vector
from .errors import DegenerateInput, InvalidInput

__all__ = [
    "ContrastiveBatch",
    "SimilarityBatch",
    "EmbeddingGrads",
    "VarianceGuard",
    "VARIANCE_EPS",
    "info_nce",
    "info_nce_extended",
    "pearson_loss",
    "pearson_loss_grad",
    "contrastive_grad",
]

VarianceGuard = Literal["strict", "train"]

# guard on sigma_X of the correlation loss, training mode only
VARIANCE_EPS = 1e-8

_NORM_EPS = 1e-12
_COSINE_SLACK = 1e-9


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInput(f"{name} must be a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class ContrastiveBatch:
    """N anchor/positive embedding rows, optional hard negatives, and the
    softmax temperature. N = 1 is allowed (the plain loss is then 0)."""

    anchors: np.ndarray
    positives: np.ndarray
    hard_negatives: np.ndarray | None
    temperature: float

    def __post_init__(self):
        a = _as_matrix(self.anchors, "anchors")
        p = _as_matrix(self.positives, "positives")
        if a.shape != p.shape:
            raise InvalidInput(f"anchors {a.shape} and positives {p.shape} differ")
        if a.shape[0] < 1:
            raise InvalidInput("batch must contain at least one pair")
        if self.hard_negatives is not None:
            h = _as_matrix(self.hard_negatives, "hard_negatives")
            if h.shape != a.shape:
                raise InvalidInput(
                    f"hard_negatives {h.shape} must match anchors {a.shape}"
                )
            object.__setattr__(self, "hard_negatives", h)
        if not (isinstance(self.temperature, (int, float)) and self.temperature > 0):
            raise InvalidInput(f"temperature must be positive, got {self.temperature}")
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "positives", p)

    @property
    def size(self) -> int:
        return self.anchors.shape[0]


@dataclass(frozen=True)
class SimilarityBatch:
    """Predicted pairwise cosines X and gold similarity scores Y."""

    cosines: np.ndarray
    gold_scores: np.ndarray

    def __post_init__(self):
        x = as_finite_vector(self.cosines, "cosines")
        y = as_finite_vector(self.gold_scores, "gold_scores")
        if x.size != y.size:
            raise InvalidInput(f"length mismatch: {x.size} cosines vs {y.size} scores")
        if x.size < 2:
            raise InvalidInput("similarity batch needs at least two pairs")
        if np.any(np.abs(x) > 1.0 + _COSINE_SLACK):
            raise InvalidInput("cosines outside [-1, 1] beyond tolerance")
        object.__setattr__(self, "cosines", x)
        object.__setattr__(self, "gold_scores", y)

    @property
    def size(self) -> int:
        return self.cosines.size


@dataclass(frozen=True)
class EmbeddingGrads:
    """Loss gradients w.r.t. every embedding row of a contrastive batch."""

    anchors: np.ndarray
    positives: np.ndarray
    hard_negatives: np.ndarray | None


def _unit_rows(x: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms <= _NORM_EPS):
        raise DegenerateInput(f"{name} contains a (near-)zero-norm embedding")
    return x / norms[:, None], norms


def _logits(batch: ContrastiveBatch, extended: bool):
    """Unit rows, cosine matrices S (anchor x positive) and T (anchor x
    hard negative, or None), all scaled by 1/temperature lazily."""
    ahat, anorm = _unit_rows(batch.anchors, "anchors")
    phat, pnorm = _unit_rows(batch.positives, "positives")
    s = ahat @ phat.T
    t = None
    nhat = nnorm = None
    if extended:
        nhat, nnorm = _unit_rows(batch.hard_negatives, "hard_negatives")
        t = ahat @ nhat.T
    return ahat, anorm, phat, pnorm, nhat, nnorm, s, t


def _mean_nll(s: np.ndarray, t: np.ndarray | None, tau: float) -> float:
    """Mean of -log softmax diagonal with row-max stabilization."""
    logits = s / tau if t is None else np.concatenate([s / tau, t / tau], axis=1)
    m = logits.max(axis=1)
    log_z = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return float(np.mean(log_z - np.diag(s) / tau))


def info_nce(batch: ContrastiveBatch) -> float:
    """Plain in-batch contrastive loss; hard negatives, if present, are
    ignored. Always >= 0; exactly 0 for a single-pair batch."""
    _, _, _, _, _, _, s, _ = _logits(batch, extended=False)
    return _mean_nll(s, None, batch.temperature)


def info_nce_extended(batch: ContrastiveBatch) -> float:
    """Contrastive loss whose denominator also sums the hard-negative
    similarities. Requires ``hard_negatives``."""
    if batch.hard_negatives is None:
        raise InvalidInput("extended loss requires hard_negatives")
    _, _, _, _, _, _, s, t = _logits(batch, extended=True)
    return _mean_nll(s, t, batch.temperature)


def _softmax_rows(s: np.ndarray, t: np.ndarray | None, tau: float):
    logits = s / tau if t is None else np.concatenate([s / tau, t / tau], axis=1)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    e /= e.sum(axis=1, keepdims=True)
    n = s.shape[1]
    return (e[:, :n], None) if t is None else (e[:, :n], e[:, n:])


def contrastive_grad(batch: ContrastiveBatch) -> EmbeddingGrads:
    """Analytic gradient of the contrastive loss w.r.t. every embedding.

    Uses the extended denominator when hard negatives are present,
    matching which loss the trainer would apply to the same batch. Each
    row's gradient is orthogonal to that row (cosine is scale-free).
    """
    extended = batch.hard_negatives is not None
    ahat, anorm, phat, pnorm, nhat, nnorm, s, t = _logits(batch, extended)
    n = batch.size
    tau = batch.temperature
    sp, sn = _softmax_rows(s, t, tau)

    g = (sp - np.eye(n)) / (n * tau)  # d loss / d S
    row_mix = g @ phat
    row_dot = np.sum(g * s, axis=1, keepdims=True)
    if extended:
        h = sn / (n * tau)  # d loss / d T
        row_mix = row_mix + h @ nhat
        row_dot = row_dot + np.sum(h * t, axis=1, keepdims=True)
    grad_a = (row_mix - row_dot * ahat) / anorm[:, None]

    col_dot = np.sum(g * s, axis=0)[:, None]
    grad_p = (g.T @ ahat - col_dot * phat) / pnorm[:, None]

    grad_n = None
    if extended:
        coln = np.sum(h * t, axis=0)[:, None]
        grad_n = (h.T @ ahat - coln * nhat) / nnorm[:, None]
    return EmbeddingGrads(anchors=grad_a, positives=grad_p, hard_negatives=grad_n)


def _guarded_stats(batch: SimilarityBatch, guard: VarianceGuard):
    if guard not in ("strict", "train"):
        raise InvalidInput(f"unknown variance guard {guard!r}")
    x = batch.cosines
    y = batch.gold_scores
    n = batch.size
    xc = x - x.mean()
    yc = y - y.mean()
    var_x = float(xc @ xc) / n
    var_y = float(yc @ yc) / n
    if math.sqrt(var_y) <= VARIANCE_EPS:
        raise DegenerateInput("gold scores have (near-)zero variance")
    if guard == "strict":
        if math.sqrt(var_x) <= VARIANCE_EPS:
            raise DegenerateInput("cosines have (near-)zero variance")
        sigma_x = math.sqrt(var_x)
    else:
        sigma_x = math.sqrt(var_x + VARIANCE_EPS**2)
    sigma_y = math.sqrt(var_y)
    cov = float(xc @ yc) / n
    return xc, yc, cov, sigma_x, sigma_y


def pearson_loss(batch: SimilarityBatch, guard: VarianceGuard = "strict") -> float:
    """Correlation loss ``1 - cov(X, Y)/(sigma_X sigma_Y)``, in [0, 2]."""
    _, _, cov, sigma_x, sigma_y = _guarded_stats(batch, guard)
    return 1.0 - cov / (sigma_x * sigma_y)


def pearson_loss_grad(
    batch: SimilarityBatch, guard: VarianceGuard = "strict"
) -> np.ndarray:
    """Gradient of :func:`pearson_loss` w.r.t. the cosine vector X.

    d loss / d x_j = -( yc_j - (cov/sigma_X^2) * xc_j ) / (N sigma_X sigma_Y);
    its components sum to zero (shift invariance of the correlation).
    """
    xc, yc, cov, sigma_x, sigma_y = _guarded_stats(batch, guard)
    n = batch.size
    return -(yc - (cov / sigma_x**2) * xc) / (n * sigma_x * sigma_y)

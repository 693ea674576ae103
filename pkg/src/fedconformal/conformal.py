"""Split conformal prediction on raw and quantized scores.

The threshold is an order statistic: the ``ceil((1 - alpha)(N + 1))``-th
smallest calibration score, or 1 when that rank exceeds ``N``. The same
threshold on quantized scores can be read off the cumulative histogram of
the levels once a fictitious score at the top level is added; both routes
share one rounding tolerance so they agree exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scores import Quantizer

# Slack for rank and cumulative-sum comparisons; far above float round-off,
# far below any resolvable step 1/(N + 1).
TOL = 1e-12


@dataclass(frozen=True)
class PredictionSet:
    """Labels (1-based) whose score is at most ``threshold``."""

    labels: frozenset
    threshold: float

    def __contains__(self, label):
        return label in self.labels

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class PredictionBatch:
    """Prediction sets for many test points sharing one threshold.

    ``mask[i, c]`` is True when (0-based) label ``c`` is in the set of row ``i``.
    """

    mask: np.ndarray
    threshold: float

    def __len__(self):
        return self.mask.shape[0]

    def __getitem__(self, i) -> PredictionSet:
        return PredictionSet(frozenset((np.flatnonzero(self.mask[i]) + 1).tolist()), self.threshold)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def covered(self, labels) -> np.ndarray:
        """Indicator of the 0-based true label being in each set."""
        labels = np.asarray(labels)
        return self.mask[np.arange(labels.size), labels]

    def coverage(self, labels) -> float:
        return float(self.covered(labels).mean())

    def inefficiency(self) -> float:
        return float(self.sizes().mean())


def conformal_rank(n: int, alpha: float) -> int:
    """``ceil((1 - alpha)(n + 1))`` computed with the shared tolerance.

    A return value above ``n`` means the threshold is the trivial value 1.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if n < 1:
        raise ValueError("need at least one score")
    return max(1, math.ceil((1.0 - alpha - TOL) * (n + 1)))


def quantile_1_minus_alpha(scores, alpha: float) -> float:
    """Conformal quantile ``Q_{1-alpha}`` of a multiset of scores in [0, 1].

    >>> quantile_1_minus_alpha([0.1, 0.5, 0.9], 0.25)
    0.9
    >>> quantile_1_minus_alpha([0.1, 0.5, 0.9], 0.2)
    1.0
    """
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("scores must be non-empty")
    rank = conformal_rank(s.size, alpha)
    if rank > s.size:
        return 1.0
    return float(np.partition(s, rank - 1)[rank - 1])


def _as_vector(test_scores):
    t = np.asarray(test_scores, dtype=float)
    if t.ndim != 1:
        raise ValueError("test_scores must be a vector with one score per label")
    return t


def cp_set(test_scores, calib_scores, alpha: float) -> PredictionSet:
    """Centralized split-CP prediction set for one test input."""
    t = _as_vector(test_scores)
    threshold = quantile_1_minus_alpha(calib_scores, alpha)
    return PredictionSet(frozenset((np.flatnonzero(t <= threshold) + 1).tolist()), threshold)


def quantized_cp_set(test_scores, calib_levels, q: Quantizer, alpha: float) -> PredictionSet:
    """Quantized CP: threshold over quantized calibration values, membership
    tested on quantized test scores.

    ``calib_levels`` holds quantized values ``S_m`` (not indices).
    """
    t = _as_vector(test_scores)
    threshold = quantile_1_minus_alpha(calib_levels, alpha)
    return PredictionSet(frozenset((np.flatnonzero(q(t) <= threshold) + 1).tolist()), threshold)


def cp_batch(test_scores, calib_scores, alpha: float) -> PredictionBatch:
    threshold = quantile_1_minus_alpha(calib_scores, alpha)
    return PredictionBatch(np.asarray(test_scores) <= threshold, threshold)


def quantized_cp_batch(test_scores, calib_scores, q: Quantizer, alpha: float) -> PredictionBatch:
    """Quantized CP for a matrix of raw test scores and raw calibration scores."""
    threshold = quantile_1_minus_alpha(q(calib_scores), alpha)
    return PredictionBatch(q(np.asarray(test_scores)) <= threshold, threshold)


def histogram_of_levels(levels, M: int) -> np.ndarray:
    """Empirical distribution of 1-based level indices over ``1..M``."""
    lv = np.asarray(levels, dtype=np.int64).ravel()
    if lv.size == 0:
        raise ValueError("levels must be non-empty")
    if lv.min() < 1 or lv.max() > M:
        raise ValueError(f"levels must lie in 1..{M}")
    return np.bincount(lv - 1, minlength=M) / lv.size


def augment_plus(p, N: int) -> np.ndarray:
    """Add a fictitious (N+1)-th score at the top level to histogram ``p``."""
    out = np.asarray(p, dtype=float) * (N / (N + 1))
    out[-1] += 1.0 / (N + 1)
    return out


def compensated_cumsum(x) -> np.ndarray:
    """Running sums with Neumaier compensation."""
    out = np.empty(len(x))
    total = comp = 0.0
    for i, v in enumerate(map(float, x)):
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[i] = total + comp
    return out


def first_crossing(v, alpha: float) -> int | None:
    """Smallest 1-based ``m`` with ``v_1 + ... + v_m >= 1 - alpha``, or None."""
    hits = np.flatnonzero(compensated_cumsum(v) >= 1.0 - alpha - TOL)
    return int(hits[0]) + 1 if hits.size else None


def quantile_index(p_plus, alpha: float) -> int:
    """Index of the (1 - alpha)-quantile of the augmented histogram ``p_plus``.

    Falls back to ``M`` if rounding leaves the cumulative sum short of
    ``1 - alpha``.
    """
    p = np.asarray(p_plus, dtype=float)
    if np.any(p < 0) or abs(math.fsum(p) - 1.0) > 1e-9:
        raise ValueError("p_plus must be a probability vector")
    m = first_crossing(p, alpha)
    return p.size if m is None else m

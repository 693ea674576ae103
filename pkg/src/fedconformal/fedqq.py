"""Quantile-of-quantiles federated CP and its digital TDMA implementation.

Each device reports the ``n``-th smallest of its ``N_d`` scores and the
server thresholds at the ``k``-th smallest report. With ``N = K * N_d``
calibration scores plus the test score exchangeable, the test score has
``t`` scores below it with probability ``1/(N+1)`` for each ``t``, and the
split of those ``t`` across devices is multivariate hypergeometric. The test
point is missed exactly when at least ``k`` devices hold ``n`` or more of
them, which gives the coverage lower bound

    1 - 1/(N+1) * sum_t [x^t] sum_{j>=k} C(K, j) A(x)^j B(x)^(K-j) / C(N, t)

with ``A(x) = sum_{i>=n} C(N_d, i) x^i`` and ``B(x) = sum_{i<n} C(N_d, i) x^i``.
Every coefficient is a sum of positive terms bounded by ``C(N, t)``, so the
float evaluation is accurate to a few ulps while it does not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import ChannelRealization, outage_prob, tdma_erasures
from .conformal import TOL, PredictionBatch, conformal_rank, quantile_1_minus_alpha
from .scores import Quantizer, ScoreTable

# C(N, N/2) overflows float64 a little past N = 1020.
MAX_POOLED_SCORES = 1000


class InstanceTooLarge(ValueError):
    """The exact bound would exceed the configured work budget."""


class InfeasibleLevels(ValueError):
    """No admissible (alpha_d, alpha_s) pair reaches the target coverage."""


@dataclass(frozen=True)
class QQLevels:
    """Device and server miscoverage levels with their integer ranks."""

    alpha_d: float
    alpha_s: float
    n: int
    k: int
    bound: float


def levels_from_ranks(N_d: int, K: int, n: int, k: int, bound: float = math.nan) -> QQLevels:
    return QQLevels(1.0 - n / (N_d + 1), 1.0 - k / (K + 1), n, k, bound)


def local_quantile(device_scores, alpha_d: float) -> float:
    """Conformal quantile of one device's scores."""
    return quantile_1_minus_alpha(device_scores, alpha_d)


def qq_threshold(local_quantiles, alpha_s: float) -> float:
    """Conformal quantile of the received local quantiles."""
    return quantile_1_minus_alpha(local_quantiles, alpha_s)


@lru_cache(maxsize=4096)
def _miss_masses(N_d: int, K: int, n: int, max_pooled: int) -> tuple:
    """``f[j]``: probability that exactly ``j`` devices hold ``>= n`` scores
    below the test score. Returned as a tuple indexed ``0..K``."""
    N = N_d * K
    if max_pooled > MAX_POOLED_SCORES:
        raise ValueError(f"max_pooled cannot exceed {MAX_POOLED_SCORES} (float64 range)")
    if N > max_pooled:
        raise InstanceTooLarge(
            f"K*N_d = {N} pooled scores exceeds the exact-evaluation budget of {max_pooled}")
    binom = np.array([math.comb(N_d, i) for i in range(N_d + 1)], dtype=float)
    A = np.where(np.arange(N_d + 1) >= n, binom, 0.0)
    B = np.where(np.arange(N_d + 1) < n, binom, 0.0)
    a_pow = [np.ones(1)]
    b_pow = [np.ones(1)]
    for _ in range(K):
        a_pow.append(np.convolve(a_pow[-1], A))
        b_pow.append(np.convolve(b_pow[-1], B))
    norm = np.array([math.comb(N, t) for t in range(N + 1)], dtype=float) * (N + 1)
    masses = []
    for j in range(K + 1):
        coef = math.comb(K, j) * np.convolve(a_pow[j], b_pow[K - j])
        masses.append(math.fsum(coef / norm))
    return tuple(masses)


def qq_bound_ranks(N_d: int, K: int, n: int, k: int,
                   max_pooled: int = MAX_POOLED_SCORES) -> float:
    """Coverage lower bound for integer ranks ``1 <= n <= N_d``, ``1 <= k <= K``."""
    if not (1 <= n <= N_d and 1 <= k <= K):
        raise ValueError(f"ranks n={n}, k={k} outside 1..{N_d} x 1..{K}")
    f = _miss_masses(N_d, K, n, max_pooled)
    return min(1.0, max(0.0, 1.0 - math.fsum(f[k:])))


def qq_bound(N_d: int, K: int, alpha_d: float, alpha_s: float,
             max_pooled: int = MAX_POOLED_SCORES) -> float:
    """Lower bound on the coverage of the quantile-of-quantiles predictor.

    Requires ``alpha_d >= 1/(N_d+1)`` and ``alpha_s >= 1/(K+1)``; raises
    ``InstanceTooLarge`` when ``K * N_d`` exceeds ``max_pooled``.
    """
    n = conformal_rank(N_d, alpha_d)
    k = conformal_rank(K, alpha_s)
    if n > N_d or k > K:
        raise ValueError("alpha_d must be >= 1/(N_d+1) and alpha_s >= 1/(K+1)")
    return qq_bound_ranks(N_d, K, n, k, max_pooled)


def _server_rank(N_d: int, K: int, n: int, alpha: float, max_pooled: int):
    """Smallest server rank ``k`` whose bound reaches ``1 - alpha``, with that bound."""
    f = _miss_masses(N_d, K, n, max_pooled)
    tail = 0.0
    bounds = []
    for k in range(K, 0, -1):
        tail = math.fsum((tail, f[k]))
        bounds.append(1.0 - tail)
    bounds.reverse()
    for k, b in enumerate(bounds, start=1):
        if b >= 1.0 - alpha - TOL:
            return k, b
    return None, None


@lru_cache(maxsize=1024)
def optimize_levels(N_d: int, K: int, alpha: float,
                    max_pooled: int = MAX_POOLED_SCORES) -> QQLevels:
    """Least conservative admissible level pair whose bound is ``>= 1 - alpha``.

    Ties in the bound are broken toward the largest ``alpha_d``, then the
    largest ``alpha_s``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    best = None
    for n in range(1, N_d + 1):
        k, b = _server_rank(N_d, K, n, alpha, max_pooled)
        if k is None:
            continue
        # the bound grows with k, so the smallest feasible k is optimal for this n
        if best is None or b < best[2] - TOL:
            best = (n, k, b)
    if best is None:
        raise InfeasibleLevels(
            f"no (alpha_d, alpha_s) pair reaches coverage {1 - alpha} with K={K}, N_d={N_d}")
    return levels_from_ranks(N_d, K, *best)


def reoptimize_server_level(N_d: int, K_received: int, n: int, alpha: float,
                            max_pooled: int = MAX_POOLED_SCORES) -> QQLevels | None:
    """Server rank for ``K_received`` reports at a device rank ``n`` fixed in advance.

    Returns None when no server level is feasible.
    """
    if K_received < 1:
        return None
    k, b = _server_rank(N_d, K_received, n, alpha, max_pooled)
    if k is None:
        return None
    return levels_from_ranks(N_d, K_received, n, k, b)


def local_quantiles(calib_scores, n: int) -> np.ndarray:
    """``n``-th smallest score on every device (rows of ``calib_scores``)."""
    s = np.asarray(calib_scores, dtype=float)
    return np.partition(s, n - 1, axis=1)[:, n - 1]


def fedqq_batch(table: ScoreTable, levels: QQLevels) -> PredictionBatch:
    """Noiseless quantile-of-quantiles predictor on raw scores."""
    qs = local_quantiles(table.calib_scores, levels.n)
    threshold = qq_threshold(qs, levels.alpha_s)
    return PredictionBatch(table.test_scores <= threshold, threshold)


@dataclass(frozen=True)
class DqqDiagnostics:
    received: int
    erasure_prob: float
    n: int
    k: int | None
    threshold: float
    flag: str | None = None


def dqq_round(table: ScoreTable, q: Quantizer, alpha: float, channel: ChannelRealization,
              T: int, seed=None, erasure_model: str = "fading",
              levels: QQLevels | None = None,
              max_pooled: int = MAX_POOLED_SCORES) -> tuple[PredictionBatch, DqqDiagnostics]:
    """One digital FedCP-QQ round over a TDMA erasure channel.

    Devices commit to the device level chosen for the nominal ``K``, send
    their quantized local quantile as a level index, and lose the packet when
    their slot is in outage. With ``erasure_model="fading"`` the outage is
    decided by the realized gain; ``"bernoulli"`` instead drops each packet
    independently with the closed-form outage probability, using ``seed``.
    The server re-selects its level for the number of packets received and
    falls back to the full label set when nothing usable arrives.
    """
    K, N_d = table.n_devices, table.n_per_device
    if channel.K != K:
        raise ValueError(f"channel has {channel.K} devices, table has {K}")
    if T < K:
        raise ValueError(f"T={T} leaves some of the K={K} devices without a channel use")
    if levels is None:
        levels = optimize_levels(N_d, K, alpha, max_pooled)
    eps = outage_prob(q.M, T, K, channel.snr)
    if erasure_model == "fading":
        erased = tdma_erasures(channel, q.M, T)
    elif erasure_model == "bernoulli":
        erased = np.random.default_rng(seed).random(K) < eps
    else:
        raise ValueError(f"unknown erasure model {erasure_model!r}")
    sent = q(local_quantiles(table.calib_scores, levels.n))
    received = sent[~erased]
    full = np.ones((table.n_test, table.n_classes), dtype=bool)
    if received.size == 0:
        return (PredictionBatch(full, 1.0),
                DqqDiagnostics(0, eps, levels.n, None, 1.0, "no_packets"))
    server = reoptimize_server_level(N_d, received.size, levels.n, alpha, max_pooled)
    if server is None:
        return (PredictionBatch(full, 1.0),
                DqqDiagnostics(received.size, eps, levels.n, None, 1.0, "server_infeasible"))
    threshold = float(np.partition(received, server.k - 1)[server.k - 1])
    return (PredictionBatch(table.test_scores <= threshold, threshold),
            DqqDiagnostics(received.size, eps, levels.n, server.k, threshold))

"""Wireless federated CP over type-based multiple access.

Active devices send their level histograms over the air; the server
rescales the matched-filter output into a noisy augmented histogram ``r``,
reads a quantile index off ``r`` at a tightened miscoverage level, and
thresholds quantized test scores at that level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import (
    ChannelRealization,
    Codebook,
    effective_noise_power,
    gamma_worst_case,
    power_control,
    repetitions,
    tbma_transmit,
)
from .conformal import TOL, PredictionBatch, PredictionSet, first_crossing
from .scores import Quantizer, ScoreTable


class InfeasibleCorrection(ValueError):
    """The noise correction leaves no positive miscoverage budget."""

    def __init__(self, message, min_snr_uses=None):
        super().__init__(message)
        # smallest T * h_min^2 * SNR that would make the correction feasible
        self.min_snr_uses = min_snr_uses


def corrected_alpha(alpha: float, sigma_sq: float, M: int) -> float:
    """``alpha - sigma_sq * M / (4 alpha)``; raises when the result is not positive.

    >>> round(corrected_alpha(0.1, 0.004 / 20, 20), 12)
    0.09
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    alpha_c = alpha - sigma_sq * M / (4.0 * alpha)
    # an exact zero can come out as a rounding residue such as 1e-18
    if alpha_c <= TOL:
        # sigma_sq * M scales as 1 / (uses * SNR); find the factor that makes it < 4 alpha^2
        factor = sigma_sq * M / (4.0 * alpha * alpha)
        raise InfeasibleCorrection(
            f"noise correction {sigma_sq * M / (4 * alpha):.4g} exhausts alpha={alpha}; "
            f"raise SNR x channel uses by a factor above {factor:.4g}",
            min_snr_uses=factor,
        )
    return alpha_c


def rescale_factor(M: int, P: float, h_min_sq: float, K_a: int, N_a: int) -> float:
    return N_a / (math.sqrt(M * P) * math.sqrt(h_min_sq) * K_a * (N_a + 1))


def build_r(w, M: int, P: float, h_min_sq: float, K_a: int, N_a: int) -> np.ndarray:
    """Noisy augmented histogram from the matched-filter output ``w``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (M,):
        raise ValueError(f"expected a length-{M} matched-filter output")
    r = w * rescale_factor(M, P, h_min_sq, K_a, N_a)
    r[-1] += 1.0 / (N_a + 1)
    return r


def corrected_index(r, alpha_c: float) -> int:
    """Smallest ``m`` with ``r_1 + ... + r_m >= 1 - alpha_c``; ``M`` if none."""
    r = np.asarray(r, dtype=float)
    m = first_crossing(r, alpha_c)
    return r.size if m is None else m


def wfcp_predict(test_scores, q: Quantizer, r, alpha_c: float) -> PredictionSet:
    t = np.asarray(test_scores, dtype=float)
    m = corrected_index(r, alpha_c)
    threshold = float(q.value(m))
    return PredictionSet(frozenset((np.flatnonzero(q.level(t) <= m) + 1).tolist()), threshold)


def wfcp_batch(test_scores, q: Quantizer, r, alpha_c: float) -> PredictionBatch:
    m = corrected_index(r, alpha_c)
    return PredictionBatch(q.level(np.asarray(test_scores)) <= m, float(q.value(m)))


def device_histograms(calib_scores, q: Quantizer) -> np.ndarray:
    """Row ``k`` is the level histogram of device ``k``'s scores."""
    levels = q.level(np.asarray(calib_scores, dtype=float)) - 1
    K, N_d = levels.shape
    flat = levels + q.M * np.arange(K)[:, None]
    return np.bincount(flat.ravel(), minlength=K * q.M).reshape(K, q.M) / N_d


@dataclass(frozen=True)
class WfcpDiagnostics:
    """Server-side quantities of one round; ``N_a`` is the calibration size
    the server assumed when rescaling."""

    K_a: int
    N_a: int
    sigma_sq: float
    alpha: float
    alpha_c: float
    index: int
    R: int
    flag: str | None = None


def wfcp_round(table: ScoreTable, q: Quantizer, alpha: float, channel: ChannelRealization,
               T: int, seed=None, *, correct: bool = True, codebook: Codebook | None = None,
               server_K: str = "active", sigma_sq: float | None = None,
               allow_nonpositive: bool = False,
               ) -> tuple[PredictionBatch, WfcpDiagnostics]:
    """One WFCP round: TBMA transmission, noise correction and prediction.

    Parameters
    ----------
    correct : bool
        With False the server uses ``alpha`` itself (the naive variant,
        which carries no coverage guarantee).
    server_K : {"active", "nominal"}
        Device count the server plugs into the rescaling and the noise
        power. ``"nominal"`` uses ``K`` in place of the number of active
        devices; it is an ablation and voids the guarantee under fading.
    sigma_sq : float, optional
        Override for the effective noise power used in the correction.
    allow_nonpositive : bool
        Keep a corrected level ``<= 0`` instead of raising. The coverage
        bound still holds there; the index then usually saturates at ``M``.

    Raises
    ------
    InfeasibleCorrection
        When the corrected level is not positive.
    """
    M = q.M
    R = repetitions(T, M)
    K, N_d = table.n_devices, table.n_per_device
    if channel.K != K:
        raise ValueError(f"channel has {channel.K} devices, table has {K}")
    if codebook is None:
        codebook = Codebook.identity(M)
    if channel.h_min_sq <= 0:
        raise ValueError("truncated inversion needs h_min_sq > 0")
    gamma = gamma_worst_case(M, channel.power, channel.h_min_sq, N_d)
    coefs, active = power_control(channel.gains, channel.h_min_sq, gamma)
    K_a = int(active.sum())
    if K_a == 0:
        full = np.ones((table.n_test, table.n_classes), dtype=bool)
        diag = WfcpDiagnostics(0, 0, math.nan, alpha, math.nan, M, R, "no_active")
        return PredictionBatch(full, 1.0), diag

    hist = device_histograms(table.calib_scores[active], q)
    w = tbma_transmit(hist, channel.gains[active], coefs[active], codebook, N_d,
                      channel.noise_power, R, seed)

    if server_K == "active":
        K_srv = K_a
    elif server_K == "nominal":
        K_srv = K
    else:
        raise ValueError(f"server_K must be 'active' or 'nominal', got {server_K!r}")
    N_srv = K_srv * N_d
    r = build_r(w, M, channel.power, channel.h_min_sq, K_srv, N_srv)
    if sigma_sq is None:
        sigma_sq = effective_noise_power(M, R * channel.snr, channel.h_min_sq, N_d, N_srv)
    try:
        if not correct:
            alpha_c = alpha
        elif allow_nonpositive:
            alpha_c = alpha - sigma_sq * M / (4.0 * alpha)
        else:
            alpha_c = corrected_alpha(alpha, sigma_sq, M)
    except InfeasibleCorrection as exc:
        snr_min_db = 10 * math.log10(channel.snr * exc.min_snr_uses)
        raise InfeasibleCorrection(
            f"{exc} (K_a={K_a}: needs SNR above {snr_min_db:.2f} dB at T={T}, "
            f"or roughly {T * exc.min_snr_uses:.0f} channel uses at this SNR)",
            min_snr_uses=exc.min_snr_uses,
        ) from None
    m = corrected_index(r, alpha_c)
    batch = PredictionBatch(q.level(table.test_scores) <= m, float(q.value(m)))
    return batch, WfcpDiagnostics(K_a, N_srv, sigma_sq, alpha, alpha_c, m, R)

"""Real-valued fading multiple-access channel.

Covers Rayleigh gains, the TDMA outage (block erasure) model used by the
digital baseline, and the type-based multiple access (TBMA) link used by
WFCP: orthonormal codebook, truncated channel inversion, over-the-air
superposition with Gaussian noise, matched filtering and repetition coding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def snr_from_db(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of the channel seen by ``K`` devices.

    ``gains`` are the non-negative fading amplitudes ``h_k``. A zero
    ``noise_power`` describes an ideal link with infinite SNR.
    """

    gains: np.ndarray
    noise_power: float
    power: float = 1.0
    h_min_sq: float = 1.0

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=float)
        if g.ndim != 1 or np.any(g < 0):
            raise ValueError("gains must be a vector of non-negative amplitudes")
        if self.noise_power < 0 or self.power <= 0 or self.h_min_sq < 0:
            raise ValueError("need noise_power >= 0, power > 0, h_min_sq >= 0")
        object.__setattr__(self, "gains", g)

    @classmethod
    def from_snr_db(cls, gains, snr_db: float, h_min_sq: float = 1.0, power: float = 1.0):
        return cls(gains, power / snr_from_db(snr_db), power, h_min_sq)

    @property
    def K(self) -> int:
        return self.gains.size

    @property
    def snr(self) -> float:
        return math.inf if self.noise_power == 0 else self.power / self.noise_power


def draw_rayleigh_gains(K: int, seed=None) -> np.ndarray:
    """Amplitudes with ``h**2 = 0.5 (a**2 + b**2)``, ``a, b ~ N(0, 1)``.

    The power ``h**2`` is exponential with unit mean.
    """
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, K))
    return np.sqrt(0.5 * (a * a + b * b))


def outage_threshold(M: int, T: int, K: int) -> float:
    """Smallest ``SNR * h**2`` that carries ``log2 M`` bits in ``floor(T/K)`` uses."""
    uses = T // K
    if uses < 1:
        raise ValueError(f"T={T} channel uses cannot serve K={K} devices")
    return M ** (2.0 / uses) - 1.0


def outage_prob(M: int, T: int, K: int, snr: float) -> float:
    """TDMA block-error probability under Rayleigh fading.

    A device fails when ``0.5 log2(1 + snr h^2) <= log2(M) / floor(T/K)``;
    with exponential ``h^2`` this is ``1 - exp(-(M**(2/floor(T/K)) - 1) / snr)``.
    """
    x = outage_threshold(M, T, K)
    if x == 0:
        return 0.0
    if snr == math.inf:
        return 0.0
    return -math.expm1(-x / snr)


def tdma_erasures(channel: ChannelRealization, M: int, T: int) -> np.ndarray:
    """Per-device erasure flags implied by the realized fading gains."""
    x = outage_threshold(M, T, channel.K)
    return channel.snr * channel.gains**2 <= x


class Codebook:
    """``M`` orthonormal codewords of length ``M`` stored as matrix columns."""

    def __init__(self, matrix):
        C = np.asarray(matrix, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("codebook must be a square matrix")
        self.matrix = C

    @classmethod
    def identity(cls, M: int) -> "Codebook":
        return cls(np.eye(M))

    @classmethod
    def random_orthonormal(cls, M: int, seed=None) -> "Codebook":
        rng = np.random.default_rng(seed)
        Q, R = np.linalg.qr(rng.standard_normal((M, M)))
        return cls(Q * np.sign(np.diag(R)))

    @property
    def M(self) -> int:
        return self.matrix.shape[1]

    @property
    def is_identity(self) -> bool:
        return np.array_equal(self.matrix, np.eye(self.M))

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.matrix.T @ self.matrix - np.eye(self.M))))


def power_control(gains, h_min_sq: float, gamma: float):
    """Truncated channel inversion.

    Returns ``(coefs, active)``: ``coefs[k] = gamma / h_k`` for devices with
    ``h_k**2 >= h_min_sq`` and 0 otherwise, plus the boolean active mask.
    """
    g = np.asarray(gains, dtype=float)
    active = g * g >= h_min_sq
    # a zero gain can only be active when h_min_sq == 0; it cannot be inverted
    active &= g > 0
    coefs = np.zeros_like(g)
    coefs[active] = gamma / g[active]
    return coefs, active


def gamma_worst_case(M: int, P: float, h_min_sq: float, N_d: int) -> float:
    """Scaling that meets the power budget even for a one-hot local histogram."""
    return math.sqrt(M * P) * math.sqrt(h_min_sq) / N_d


def transmit_energy(p_k, coef: float, N_d: int) -> float:
    """``||u_k||^2`` of a device sending histogram ``p_k`` with coefficient ``coef``."""
    p = np.asarray(p_k, dtype=float)
    return float((coef * N_d) ** 2 * (p @ p))


def renyi2_entropy(p) -> float:
    """Collision (order-2 Renyi) entropy in bits."""
    p = np.asarray(p, dtype=float)
    return float(-math.log2(p @ p))


def tbma_transmit(histograms, gains, coefs, codebook: Codebook, N_d: int,
                  noise_power: float, R: int = 1, seed=None) -> np.ndarray:
    """Over-the-air TBMA round; returns the matched-filter output ``w``.

    Each active device ``k`` sends ``u_k = coefs[k] * N_d * C @ p_k``; the
    server receives the superposition ``sum_k h_k u_k`` plus fresh
    ``N(0, noise_power)`` noise in each of ``R`` repetitions, averages the
    repetitions and applies ``C.T``.

    Parameters
    ----------
    histograms : array_like, shape (K_a, M)
        Local empirical distributions of the transmitting devices.
    gains, coefs : array_like, shape (K_a,)
        Fading amplitudes and power-control coefficients of those devices.
    """
    M = codebook.M
    P = np.asarray(histograms, dtype=float)
    if P.size == 0:
        P = np.empty((0, M))
    P = np.atleast_2d(P)
    if P.shape[1] != M:
        raise ValueError(f"histograms have {P.shape[1]} bins but the codebook has {M} codewords")
    if R < 1:
        raise ValueError("need at least one repetition")
    amp = np.asarray(gains, dtype=float) * np.asarray(coefs, dtype=float) * N_d
    superposed = amp @ P if P.shape[0] else np.zeros(M)
    if noise_power > 0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal((R, M)).mean(axis=0) * math.sqrt(noise_power)
    else:
        noise = np.zeros(M)
    if codebook.is_identity:
        return superposed + noise
    C = codebook.matrix
    v = C @ superposed + noise
    return C.T @ v


def effective_noise_power(M: int, snr_effective: float, h_min_sq: float,
                          N_d: int, N_a: int) -> float:
    """Variance of each entry of the rescaled histogram estimate.

    ``N_d**2 / (M h_min_sq snr (N_a + 1)**2)``; pass ``R * snr`` when the
    frame is repeated ``R`` times.
    """
    if snr_effective == math.inf:
        return 0.0
    if snr_effective <= 0 or h_min_sq <= 0:
        raise ValueError("need positive SNR and h_min_sq")
    return N_d**2 / (M * h_min_sq * snr_effective * (N_a + 1) ** 2)


def repetitions(T: int, M: int) -> int:
    """Number of full TBMA frames of length ``M`` that fit in ``T`` uses."""
    R = T // M
    if R < 1:
        raise ValueError(f"M={M} levels need more than the T={T} channel uses available")
    return R

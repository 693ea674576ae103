"""
Over-the-air histogram aggregation
==================================

Instead of sending a quantile, every device transmits its whole level
histogram at once: level ``m`` is mapped to codeword ``m`` and the channel
adds the signals of all devices. Truncated channel inversion makes every
active device arrive with the same amplitude, so the matched filter output
is a scaled, noisy copy of the pooled histogram.
"""

import math

import numpy as np

from fedconformal import Codebook, Quantizer, generate_synthetic
from fedconformal.channel import (
    effective_noise_power,
    gamma_worst_case,
    power_control,
    renyi2_entropy,
    tbma_transmit,
    transmit_energy,
)
from fedconformal.conformal import augment_plus, histogram_of_levels
from fedconformal.wfcp import build_r, device_histograms

M, K, N_d, P, h_min_sq = 10, 8, 25, 1.0, 0.5
table = generate_synthetic(10, K, N_d, 1, np.full(10, 0.1), seed=3)
q = Quantizer(M)
hist = device_histograms(table.calib_scores, q)

# %%
# Power control: devices in a deep fade stay silent.
gains = np.sqrt(np.random.default_rng(4).exponential(size=K))
gamma = gamma_worst_case(M, P, h_min_sq, N_d)
coefs, active = power_control(gains, h_min_sq, gamma)
print("active devices:", np.flatnonzero(active))
for k in np.flatnonzero(active)[:3]:
    print(f"device {k}: energy {transmit_energy(hist[k], coefs[k], N_d):.2f} <= M*P = {M * P}, "
          f"histogram entropy {renyi2_entropy(hist[k]):.2f} bits")

# %%
# Transmit, rescale, and compare with the noiseless augmented histogram.
K_a = int(active.sum())
N_a = K_a * N_d
target = augment_plus(histogram_of_levels(q.level(table.calib_scores[active]), M), N_a)
codebook = Codebook.random_orthonormal(M, seed=5)
for snr_db in (20.0, 0.0, -10.0):
    w = tbma_transmit(hist[active], gains[active], coefs[active], codebook, N_d,
                      P / 10 ** (snr_db / 10), seed=6)
    r = build_r(w, M, P, h_min_sq, K_a, N_a)
    sigma = math.sqrt(effective_noise_power(M, 10 ** (snr_db / 10), h_min_sq, N_d, N_a))
    print(f"SNR {snr_db:+5.1f} dB: max |r - p+| = {np.max(np.abs(r - target)):.4f}, "
          f"predicted noise std {sigma:.4f}")

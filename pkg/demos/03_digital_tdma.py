"""
Digital baseline: quantized reports over a TDMA fading channel
==============================================================

Each device gets ``floor(T / K)`` channel uses to send ``log2 M`` bits. A
packet is lost when the fading gain leaves the slot's capacity below the
required rate. With few channel uses per device almost every packet is
lost and the server falls back to the trivial set of all labels.
"""

import numpy as np

from fedconformal import ChannelRealization, Quantizer, draw_rayleigh_gains, generate_synthetic
from fedconformal.channel import outage_prob
from fedconformal.fedqq import dqq_round

# %%
# Closed-form outage probability as the channel budget grows.
M, K = 20, 20
for T in (20, 40, 60, 100, 200, 400):
    eps = [outage_prob(M, T, K, 10 ** (snr_db / 10)) for snr_db in (0, 10, 20)]
    print(f"T={T:<4d} uses/device={T // K:<3d} outage at 0/10/20 dB: "
          + " / ".join(f"{e:.3f}" for e in eps))

# %%
# One round at a generous budget: most reports arrive.
table = generate_synthetic(10, K, 20, 500, np.full(10, 0.1), seed=1)
q = Quantizer(M)
channel = ChannelRealization.from_snr_db(draw_rayleigh_gains(K, seed=2), snr_db=20.0)
batch, diag = dqq_round(table, q, 0.1, channel, T=200)
print(diag)
print(f"coverage {batch.coverage(table.test_labels):.3f}, mean set size {batch.inefficiency():.2f}")

# %%
# The same round with T = 60 at 0 dB loses everything.
channel = ChannelRealization.from_snr_db(draw_rayleigh_gains(K, seed=2), snr_db=0.0)
batch, diag = dqq_round(table, q, 0.1, channel, T=60)
print(diag.flag, "-> mean set size", batch.inefficiency())

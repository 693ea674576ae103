"""
Split conformal prediction, exact and quantized
===============================================

A classifier's softmax output becomes a *prediction set*: every label whose
nonconformity score ``1 - p(y | x)`` stays below a threshold learned from a
held-out calibration set. Quantizing the calibration scores to ``M`` levels
never lowers the threshold, so coverage is kept at the price of slightly
larger sets.
"""

import numpy as np

from fedconformal import Quantizer, cp_batch, generate_synthetic, quantized_cp_batch
from fedconformal.conformal import quantile_1_minus_alpha

# %%
# A calibrated synthetic "model" over 10 classes. A small Dirichlet
# concentration makes most outputs confident.
table = generate_synthetic(C=10, K=1, N_d=400, n_test=2000, dirichlet_conc=np.full(10, 0.1), seed=0)
scores = table.pooled()
print(f"{scores.size} calibration scores, median {np.median(scores):.3f}")

# %%
# The threshold is the ceil((1 - alpha)(N + 1))-th smallest calibration score.
alpha = 0.1
print("threshold:", quantile_1_minus_alpha(scores, alpha))

exact = cp_batch(table.test_scores, scores, alpha)
print(f"exact CP      coverage {exact.coverage(table.test_labels):.3f}  "
      f"mean set size {exact.inefficiency():.2f}")

# %%
# Coarser quantizers inflate the sets; coverage never drops below target.
for M in (4, 10, 20, 100):
    batch = quantized_cp_batch(table.test_scores, scores, Quantizer(M), alpha)
    print(f"M={M:<4d} threshold {batch.threshold:.3f}  coverage "
          f"{batch.coverage(table.test_labels):.3f}  size {batch.inefficiency():.2f}")

# %%
# Individual sets are plain frozensets of 1-based labels.
for i in range(3):
    s = exact[i]
    print(f"test point {i}: true label {table.test_labels[i] + 1}, set {sorted(s.labels)}")

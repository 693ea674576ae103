"""
Quantile of quantiles: choosing the two levels
==============================================

When ``K`` devices each hold ``N_d`` calibration scores and may only report
one number, each device sends a local order statistic and the server takes
an order statistic of the reports. The coverage of that rule can be
computed exactly for exchangeable scores; the best pair of ranks is the one
whose guaranteed coverage sits closest above ``1 - alpha``.
"""

import numpy as np

from fedconformal import generate_synthetic, optimize_levels, qq_bound_ranks
from fedconformal.fedqq import fedqq_batch

# %%
# Guaranteed coverage for every rank pair of a small federation.
N_d, K = 5, 4
print("rows: device rank n, columns: server rank k")
for n in range(1, N_d + 1):
    print(f"n={n}  " + "  ".join(f"{qq_bound_ranks(N_d, K, n, k):.3f}" for k in range(1, K + 1)))

# %%
# The optimizer scans all pairs and keeps the least conservative feasible one.
for alpha in (0.3, 0.2, 0.1):
    lv = optimize_levels(N_d, K, alpha)
    print(f"alpha={alpha}: n={lv.n}, k={lv.k}, bound {lv.bound:.4f}")

# %%
# With 20 devices of 20 scores the optimum is "each device sends its
# maximum, the server keeps the third smallest maximum".
lv = optimize_levels(20, 20, 0.1)
print(lv)

# %%
# Monte Carlo check: average coverage over fresh calibration sets.
cover = []
for t in range(300):
    table = generate_synthetic(10, 20, 20, 200, np.full(10, 0.1), seed=t)
    cover.append(fedqq_batch(table, lv).coverage(table.test_labels))
print(f"empirical coverage {np.mean(cover):.4f} (guaranteed {lv.bound:.4f})")

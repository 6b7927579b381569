"""Early head pruning and the score approximation.

The head decision uses the same integer products the block masks are built
from, so an unimportant head is dropped before any fraction work happens.
The second half quantifies what the approximation drops: the product of
the two fractional parts, bounded by d_h in magnitude per score.
"""

import numpy as np

from hdp import DEFAULT_FORMAT, Gaussian, Uniform, gen_synthetic
from hdp.fxp import split_array
from hdp.pruning import PruneParams, hdp_attention_head

fmt = DEFAULT_FORMAT
l, d_h = 16, 8

print("--- near-zero head ---")
Qs = gen_synthetic(l, d_h, Uniform(-0.99, 0.99), 1, fmt)  # every |value| < 1
Ks = gen_synthetic(l, d_h, Uniform(-0.99, 0.99), 2, fmt)
V = gen_synthetic(l, d_h, Gaussian(0, 4), 3, fmt)
out, mask, stats = hdp_attention_head(Qs.raw, Ks.raw, V.raw, PruneParams(0.0, 1.0), fmt)
print(f"all inputs inside (-1, 1): head importance is exactly 0, head pruned "
      f"-> output all zero: {not out.any()}")
print(f"fraction MACs skipped by the head decision: {stats.macs_frac_skipped}")

print("\n--- head threshold sweep ---")
Q = gen_synthetic(l, d_h, Gaussian(0, 2), 11, fmt)
K = gen_synthetic(l, d_h, Gaussian(0, 2), 12, fmt)
for tau in (0.0, 1e3, 1e4, 1e5):
    out, mask, stats = hdp_attention_head(Q.raw, K.raw, V.raw, PruneParams(0.0, tau), fmt)
    state = "pruned" if stats.heads_pruned else "kept"
    print(f"  tau {tau:>8.0f}: head {state:>6}, frac MACs executed {stats.macs_frac_executed:>6}")

print("\n--- what the approximation drops ---")
iq, fq = split_array(Q.raw, fmt)
ik, fk = split_array(K.raw, fmt)
dropped = (fq @ fk.T) / fmt.scale**2  # the omitted fraction x fraction term
exact = (Q.raw @ K.raw.T) / fmt.scale**2
rel = np.abs(dropped) / np.maximum(np.abs(exact), 1e-9)
print(f"dropped term per score: max |value| {np.abs(dropped).max():.3f} "
      f"(bound d_h = {d_h}), median {np.median(np.abs(dropped)):.3f}")
print(f"relative to the exact score: median {np.median(rel):.4f}, "
      f"90th percentile {np.quantile(rel, 0.9):.4f}")
print("every other term (int x int, int x frac, frac x int) is kept exactly,")
print("so the approximation error per score is precisely this dropped product.")

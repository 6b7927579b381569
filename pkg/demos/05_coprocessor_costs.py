"""Cost accounting of the co-processor dataflow.

Runs the same layer through the functional pipeline and the co-processor
model at several pruning ratios and reports what the fetch-upon-mask
strategy and early head pruning save in MACs and DRAM traffic.
"""

import numpy as np

from hdp import AttentionConfig, DEFAULT_FORMAT, Gaussian, PruneParams, gen_synthetic
from hdp.pruning import hdp_attention
from hdp.simulator import simulate_layer

fmt = DEFAULT_FORMAT
l, d, heads = 32, 32, 2
cfg = AttentionConfig(l, d, heads, fmt)
Q = gen_synthetic(l, d, Gaussian(0, 4), 100, fmt)
K = gen_synthetic(l, d, Gaussian(0, 4), 101, fmt)
V = gen_synthetic(l, d, Gaussian(0, 4), 102, fmt)

d_h = cfg.head_dim
dense_bytes = (7 * l * d_h + d_h * l * l) * 2 * heads
print(f"layer: l={l}, d={d}, {heads} heads; dense per-layer demand {dense_bytes} bytes")
print()
print("ratio | blocks pruned | frac MACs | AV MACs | fetched B | skipped B | sm err")
for rho in (-0.5, 0.0, 0.3, 0.6):
    params = PruneParams(rho, 0.0)
    out, report, masks = simulate_layer(Q, K, V, params, cfg)
    core_out, core_masks, stats = hdp_attention(Q, K, V, params, cfg)
    assert all(a == b for a, b in zip(masks, core_masks))
    fetched = report.total("dram_fetched_bytes")
    skipped = report.total("dram_skipped_bytes")
    assert fetched + skipped == dense_bytes
    frac = report.total("macs_frac1") + report.total("macs_frac2")
    av = sum(report.total(c) for c in ("macs_av_ii", "macs_av_if", "macs_av_fi", "macs_av_ff"))
    print(
        f"{rho:>5} | {stats.blocks_pruned:>6}/{stats.blocks_total:<6} | {frac:>9} | {av:>7} "
        f"| {fetched:>9} | {skipped:>9} | {report.softmax_max_abs_err:.4f}"
    )

print()
print("with an aggressive head threshold everything after the integer pass")
print("disappears and only the integer fetches plus the result write remain:")
out, report, _ = simulate_layer(Q, K, V, PruneParams(0.0, 2.0**62), cfg)
print(f"  heads skipped: {report.heads_skipped}/{heads}, "
      f"fetched {report.total('dram_fetched_bytes')} bytes, "
      f"skipped {report.total('dram_skipped_bytes')} bytes, output zero: {not out.raw.any()}")

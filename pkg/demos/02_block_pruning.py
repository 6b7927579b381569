"""Block pruning on one attention head, step by step.

Shows the integer score matrix, the 2x2 block importance grid, the
per-row thresholds, and how the keep mask tightens as the pruning ratio
grows from negative (threshold pulled toward the row minimum) to positive
(pulled toward the row maximum).
"""

import numpy as np

from hdp import DEFAULT_FORMAT, Gaussian, gen_synthetic
from hdp.fxp import split_array
from hdp.pruning import block_importance, build_mask, integer_score, row_threshold

fmt = DEFAULT_FORMAT
l, d_h = 16, 8
Q = gen_synthetic(l, d_h, Gaussian(0, 4), 7, fmt)
K = gen_synthetic(l, d_h, Gaussian(0, 4), 8, fmt)

iq, _ = split_array(Q.raw, fmt)
ik, _ = split_array(K.raw, fmt)
ints = integer_score(iq, ik)
imp = block_importance(ints)

print(f"one head, l={l}, d_h={d_h}: integer score matrix is {l}x{l}, "
      f"importance grid {l // 2}x{l // 2}")
print("\nblock importance grid (absolute sums of each 2x2 block):")
print(imp.values)
print(f"\nhead importance total: {imp.head_total}")

print("\nper-row thresholds at a few pruning ratios:")
print("row |      min      mean       max |   ratio -0.5    ratio 0.0    ratio 0.5")
for i in range(imp.values.shape[0]):
    mn, mx = int(imp.row_min[i]), int(imp.row_max[i])
    mean = imp.row_mean(i)
    cells = [float(row_threshold(mn, mx, mean, r)) for r in (-0.5, 0.0, 0.5)]
    print(f"{i:>3} | {mn:>8} {float(mean):>9.1f} {mx:>9} | {cells[0]:>12.1f} {cells[1]:>12.1f} {cells[2]:>12.1f}")

print("\nkeep masks (1 = keep, . = pruned):")
for ratio in (-0.5, 0.0, 0.5):
    mask = build_mask(imp, ratio)
    print(f"\nratio {ratio}: kept {mask.kept()}/{mask.bits.size}")
    for row in mask.bits:
        print("   " + " ".join("1" if b else "." for b in row))

print("\nnote the row maxima: a row's strongest block is never pruned, because")
print("the threshold interpolates between row statistics that it bounds.")

"""Accuracy of the hardware softmax unit.

The unit approximates each exponent with a range-reduced quadratic and the
reciprocal of the row sum with a linear seed plus one Newton step.  This
demo measures the deviation from exact softmax across random score rows
and shows where the error comes from.
"""

import math

import numpy as np

from hdp import hw_softmax
from hdp.reference import softmax_rows
from hdp.simulator import _approx_exp_nonpos, _approx_recip

rng = np.random.default_rng(0)

print("exponent approximation on [-ln2, 0] (quadratic, endpoints exact):")
r = np.linspace(-math.log(2), 0, 9)
for x, approx, exact in zip(r, _approx_exp_nonpos(r), np.exp(r)):
    print(f"  e^{x:+.3f}: approx {approx:.6f}  exact {exact:.6f}  err {approx - exact:+.2e}")

print("\nreciprocal approximation (seed + one Newton step):")
for s in (1.0, 1.3, 2.0, 7.5, 100.0):
    approx = _approx_recip(s)
    print(f"  1/{s:<6}: approx {approx:.8f}  exact {1 / s:.8f}  rel err {abs(approx * s - 1):.2e}")

print("\ndeviation from exact softmax over 2000 random rows:")
worst = 0.0
worst_sum = 0.0
errs = []
for _ in range(2000):
    width = int(rng.integers(2, 257))
    row = np.round(rng.normal(0, 8, width) * 256) / 256
    approx = hw_softmax(row)
    exact = softmax_rows(row[None, :])[0]
    err = float(np.abs(approx - exact).max())
    errs.append(err)
    worst = max(worst, err)
    worst_sum = max(worst_sum, abs(float(approx.sum()) - 1.0))

print(f"  max |approx - exact| = {worst:.6f}  (budget 2^-7 = {2**-7:.6f})")
print(f"  median row error     = {np.median(errs):.6f}")
print(f"  worst row-sum drift  = {worst_sum:.6f}  (budget 2^-6 = {2**-6:.6f})")
print("\nthe dominant term is the reciprocal's post-Newton relative error")
print(f"(1/17)^2 = {1 / 289:.6f}; the exponent polynomial contributes the rest.")

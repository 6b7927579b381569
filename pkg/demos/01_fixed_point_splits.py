"""Fixed-point formats and the integer/fraction split.

Every pruning decision in this library is made from the integer parts of
quantized values, so this demo walks through what quantization and the
truncation-toward-zero split actually produce, including the near-zero
behavior the score approximation relies on.
"""

import numpy as np

from hdp import FxpFormat, quantize, split
from hdp.fxp import split_array

fmt = FxpFormat.parse("Q8.8")
print(f"format {fmt}: {fmt.total_bits} bits, scale {fmt.scale}, "
      f"representable range [{fmt.raw_min / fmt.scale}, {fmt.raw_max / fmt.scale}]")

print("\nquantization (round-to-nearest-even, saturating):")
for x in (0.0, 2.5, -3.75, 0.00195, 200.0, -200.0):
    v = quantize(x, fmt)
    print(f"  {x:>10} -> raw {v.raw:>7}  (= {v.value})")

print("\ntruncation-toward-zero splits (value = int_part + frac_part):")
for x in (2.5, -3.75, 0.999, -0.3, -0.999):
    s = split(quantize(x, fmt))
    print(f"  {x:>7} -> int {s.int_part.value:>6}  frac {s.frac_part.value:>9}")

print("\nnear-zero property: |v| < 1 if and only if the integer part is 0.")
raws = np.arange(fmt.raw_min, fmt.raw_max + 1, dtype=np.int64)
int_vals, frac_raw = split_array(raws, fmt)
assert np.array_equal(int_vals == 0, np.abs(raws) < fmt.scale)
assert np.array_equal(int_vals * fmt.scale + frac_raw, raws)
print(f"checked exhaustively over all {raws.size} raw values: "
      "reconstruction exact, near-zero property holds.")

print("\nwhy it matters: a score between two near-zero operands is built only")
print("from integer x integer, integer x fraction and fraction x integer")
print("products, all of which vanish when both integer parts are zero, so")
print("those scores prune themselves without ever being computed.")

"""Signed fixed-point formats, quantization, and the integer/fraction split.

Values are carried as two's-complement raw integers scaled by 2**frac_bits.
All rounding is round-to-nearest-even and all narrowing saturates; nothing
here ever wraps around.  Matrix-level helpers operate on int64 arrays of
raws so the whole pipeline stays exact until an explicit narrowing step.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

_FORMAT_RE = re.compile(r"^Q(\d+)\.(\d+)$")


@dataclass(frozen=True)
class FxpFormat:
    """A Q<i>.<f> signed fixed-point format.

    total_bits counts everything including the sign bit; frac_bits is the
    width of the fractional field.  At least two non-fractional bits are
    required (sign plus one integer bit).
    """

    total_bits: int = 16
    frac_bits: int = 8

    def __post_init__(self):
        if not 0 < self.frac_bits < self.total_bits:
            raise ValueError(f"frac_bits must be in (0, {self.total_bits}), got {self.frac_bits}")
        if self.total_bits - self.frac_bits < 2:
            raise ValueError("need at least sign + one integer bit")

    @property
    def int_bits(self) -> int:
        return self.total_bits - self.frac_bits

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @classmethod
    def parse(cls, text: str) -> "FxpFormat":
        """Parse a "Q<i>.<f>" string, e.g. "Q8.8" (i includes the sign bit)."""
        m = _FORMAT_RE.match(text.strip())
        if m is None:
            raise ValueError(f"bad format string {text!r}, expected Q<i>.<f>")
        i, f = int(m.group(1)), int(m.group(2))
        return cls(total_bits=i + f, frac_bits=f)

    def __str__(self) -> str:
        return f"Q{self.int_bits}.{self.frac_bits}"


DEFAULT_FORMAT = FxpFormat(16, 8)


@dataclass(frozen=True)
class FxpValue:
    """One fixed-point number: raw two's-complement integer plus its format."""

    raw: int
    fmt: FxpFormat

    def __post_init__(self):
        if not self.fmt.raw_min <= self.raw <= self.fmt.raw_max:
            raise ValueError(f"raw {self.raw} outside {self.fmt} range")

    @property
    def value(self) -> float:
        return self.raw / self.fmt.scale

    def is_integer(self) -> bool:
        return self.raw % self.fmt.scale == 0

    def __repr__(self) -> str:
        return f"FxpValue({self.value}, {self.fmt})"


@dataclass(frozen=True)
class FxpSplit:
    """Truncation-toward-zero decomposition v == int_part + frac_part.

    The integer part is v with its fractional field cleared toward zero, so
    |frac_part| < 1 and frac_part carries the sign of v (or is zero).  Under
    this convention every |v| < 1 has a zero integer part, negatives
    included, which is what makes near-zero score pruning work.
    """

    int_part: FxpValue
    frac_part: FxpValue


def round_half_even(x: float) -> int:
    """Nearest integer, ties to even. Errors on non-finite input."""
    if not math.isfinite(x):
        raise ValueError("non-finite input")
    return round(x)


def quantize(x: float, fmt: FxpFormat) -> FxpValue:
    """Real number -> fixed point, round-to-nearest-even, saturating."""
    if not math.isfinite(x):
        raise ValueError("non-finite input")
    scaled = x * fmt.scale
    if scaled >= fmt.raw_max:
        return FxpValue(fmt.raw_max, fmt)
    if scaled <= fmt.raw_min:
        return FxpValue(fmt.raw_min, fmt)
    return FxpValue(round(scaled), fmt)


def split(v: FxpValue) -> FxpSplit:
    s = v.fmt.scale
    if v.raw >= 0:
        int_raw = (v.raw // s) * s
    else:
        int_raw = -((-v.raw) // s) * s
    return FxpSplit(FxpValue(int_raw, v.fmt), FxpValue(v.raw - int_raw, v.fmt))


def fxp_add(a: FxpValue, b: FxpValue) -> FxpValue:
    if a.fmt != b.fmt:
        raise ValueError("format mismatch")
    return FxpValue(_saturate_int(a.raw + b.raw, a.fmt), a.fmt)


def fxp_mul(a: FxpValue, b: FxpValue) -> FxpValue:
    if a.fmt != b.fmt:
        raise ValueError("format mismatch")
    wide = a.raw * b.raw
    return FxpValue(_saturate_int(_rne_shift_int(wide, a.fmt.frac_bits), a.fmt), a.fmt)


def _saturate_int(raw: int, fmt: FxpFormat) -> int:
    return min(max(raw, fmt.raw_min), fmt.raw_max)


def _rne_shift_int(p: int, f: int) -> int:
    """Round-to-nearest-even of p / 2**f for a plain Python int."""
    q, r = divmod(p, 1 << f)
    half = 1 << (f - 1)
    if r > half or (r == half and q & 1):
        q += 1
    return q


# --- array helpers (raws are int64, widened math stays in int64) ---


def quantize_array(x: np.ndarray, fmt: FxpFormat) -> np.ndarray:
    """Vectorized quantize; returns int64 raws. Errors on any non-finite entry."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    scaled = np.clip(np.rint(x * fmt.scale), fmt.raw_min, fmt.raw_max)
    return scaled.astype(np.int64)


def dequantize_array(raw: np.ndarray, fmt: FxpFormat) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / fmt.scale


def saturate_array(raw: np.ndarray, fmt: FxpFormat) -> np.ndarray:
    return np.clip(raw, fmt.raw_min, fmt.raw_max)


def rne_shift_array(p: np.ndarray, f: int) -> np.ndarray:
    """Round-to-nearest-even of p / 2**f, elementwise on int64 arrays.

    Uses floor-shift plus a remainder correction so negatives round the
    same way as the scalar path.
    """
    p = np.asarray(p, dtype=np.int64)
    q = p >> f
    r = p - (q << f)
    half = np.int64(1 << (f - 1))
    bump = (r > half) | ((r == half) & ((q & 1) == 1))
    return q + bump.astype(np.int64)


def split_array(raw: np.ndarray, fmt: FxpFormat) -> tuple[np.ndarray, np.ndarray]:
    """Split raws into (integer values, fractional raws), truncating toward zero.

    The first array holds plain integers (the value of the integer part, not
    a raw); the second holds raws of the fractional remainder, |frac| < scale.
    """
    raw = np.asarray(raw, dtype=np.int64)
    mag = np.abs(raw) >> fmt.frac_bits
    int_vals = np.sign(raw) * mag
    frac_raw = raw - (int_vals << fmt.frac_bits)
    return int_vals, frac_raw


def matmul_fxp(a_raw: np.ndarray, b_raw: np.ndarray, fmt: FxpFormat) -> np.ndarray:
    """Fixed-point matmul: exact widened accumulation, one narrowing at write-back."""
    acc = np.asarray(a_raw, dtype=np.int64) @ np.asarray(b_raw, dtype=np.int64)
    return saturate_array(rne_shift_array(acc, fmt.frac_bits), fmt)


def scale_by_rsqrt(acc_raw: np.ndarray, n: int, fmt: FxpFormat) -> np.ndarray:
    """Divide widened scale-2**f raws by sqrt(n) and narrow to the format.

    float64 division of the exact accumulator followed by a half-even round;
    both steps are correctly rounded IEEE operations, so the result is
    platform-stable for |acc| < 2**53.
    """
    divided = np.asarray(acc_raw, dtype=np.float64) / math.sqrt(n)
    return saturate_array(np.rint(divided).astype(np.int64), fmt)

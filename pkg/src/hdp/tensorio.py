"""Matrix container, deterministic synthetic tensors, and the HDPT file format.

HDPT layout (little-endian):

    bytes 0-3   magic "HDPT"
    byte  4     version (currently 1)
    byte  5     total_bits
    byte  6     frac_bits
    byte  7     reserved (0)
    bytes 8-11  rows  (u32)
    bytes 12-15 cols  (u32)
    then rows*cols signed 16-bit raws, row-major

The synthetic generator is counter-based (SplitMix64) so the same
(shape, distribution, seed) produces the same bits on every platform:
draw i mixes the 64-bit state seed + (i+1)*0x9E3779B97F4A7C15 through the
SplitMix64 finalizer; the top 53 bits become a uniform double.  Gaussian
draws use Box-Muller on the uniforms for counters (2i, 2i+1):
mu + sigma*sqrt(-2 ln u1)*cos(2 pi u2) with u1 in (0, 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from .fxp import FxpFormat, quantize_array

MAGIC = b"HDPT"
VERSION = 1
_HEADER = struct.Struct("<4sBBBBII")


class TensorFileError(Exception):
    """Base for HDPT load failures; .code names the failure class."""

    code = "tensor-file-error"


class BadMagicError(TensorFileError):
    code = "bad-magic"


class VersionMismatchError(TensorFileError):
    code = "version-mismatch"


class TruncatedPayloadError(TensorFileError):
    code = "truncated-payload"


class FormatMismatchError(TensorFileError):
    code = "format-mismatch"


class Matrix:
    """Dense row-major 2-D container of fixed-point raws sharing one format.

    Immutable after construction: the raw array is locked read-only.
    """

    __slots__ = ("rows", "cols", "fmt", "raw")

    def __init__(self, raw: np.ndarray, fmt: FxpFormat):
        raw = np.asarray(raw, dtype=np.int64)
        if raw.ndim != 2:
            raise ValueError("Matrix needs a 2-D array of raws")
        if raw.size and (raw.min() < fmt.raw_min or raw.max() > fmt.raw_max):
            raise ValueError(f"raw values outside {fmt} range")
        raw = raw.copy()
        raw.flags.writeable = False
        self.rows, self.cols = raw.shape
        self.fmt = fmt
        self.raw = raw

    @classmethod
    def from_reals(cls, values: np.ndarray, fmt: FxpFormat) -> "Matrix":
        return cls(quantize_array(np.asarray(values, dtype=np.float64), fmt), fmt)

    def to_reals(self) -> np.ndarray:
        return self.raw.astype(np.float64) / self.fmt.scale

    def head(self, head_id: int, d_h: int) -> np.ndarray:
        """Raw column slice for one attention head (read-only view)."""
        if self.cols % d_h != 0 or not 0 <= head_id < self.cols // d_h:
            raise ValueError("head slice out of range")
        return self.raw[:, head_id * d_h : (head_id + 1) * d_h]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Matrix)
            and self.fmt == other.fmt
            and self.raw.shape == other.raw.shape
            and bool(np.array_equal(self.raw, other.raw))
        )

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols}, {self.fmt})"


@dataclass(frozen=True)
class HeadView:
    """Column window [head_id*d_h, (head_id+1)*d_h) of a parent matrix."""

    parent: Matrix
    head_id: int
    d_h: int

    def __post_init__(self):
        if self.parent.cols % self.d_h != 0:
            raise ValueError("columns not divisible by head width")
        if not 0 <= self.head_id < self.parent.cols // self.d_h:
            raise ValueError("head_id out of range")

    @property
    def raw(self) -> np.ndarray:
        return self.parent.head(self.head_id, self.d_h)


@dataclass(frozen=True)
class Gaussian:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.std)) or self.std < 0:
            raise ValueError("invalid distribution parameters: gaussian needs finite mean, std >= 0")


@dataclass(frozen=True)
class Uniform:
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.low) and np.isfinite(self.high)) or self.high < self.low:
            raise ValueError("invalid distribution parameters: uniform needs low <= high")


Distribution = Union[Gaussian, Uniform]

_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def _splitmix64(counters: np.ndarray, seed: int) -> np.ndarray:
    """SplitMix64 finalizer over seed + (counter+1)*golden-gamma states."""
    with np.errstate(over="ignore"):
        z = (np.uint64(seed & _MASK64) + (counters + np.uint64(1)) * np.uint64(_GOLDEN)).astype(np.uint64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def _uniform01(counters: np.ndarray, seed: int) -> np.ndarray:
    # top 53 bits -> double in [0, 1)
    return (_splitmix64(counters, seed) >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def generate_reals(rows: int, cols: int, dist: Distribution, seed: int) -> np.ndarray:
    """Pre-quantization real samples; deterministic in (shape, dist, seed)."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    n = rows * cols
    if isinstance(dist, Uniform):
        u = _uniform01(np.arange(n, dtype=np.uint64), seed)
        vals = dist.low + u * (dist.high - dist.low)
    elif isinstance(dist, Gaussian):
        idx = np.arange(n, dtype=np.uint64)
        # (0,1] for the log argument: shift the 53-bit integer up by one
        u1 = ((_splitmix64(idx * np.uint64(2), seed) >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0**-53)
        u2 = _uniform01(idx * np.uint64(2) + np.uint64(1), seed)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        vals = dist.mean + dist.std * z
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    return vals.reshape(rows, cols)


def gen_synthetic(rows: int, cols: int, dist: Distribution, seed: int, fmt: FxpFormat) -> Matrix:
    return Matrix.from_reals(generate_reals(rows, cols, dist, seed), fmt)


def save_tensor(path, m: Matrix) -> None:
    if m.fmt.total_bits > 16:
        raise FormatMismatchError("HDPT v1 stores 16-bit raws; format too wide")
    header = _HEADER.pack(MAGIC, VERSION, m.fmt.total_bits, m.fmt.frac_bits, 0, m.rows, m.cols)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(m.raw.astype("<i2").tobytes())


def load_tensor(path, expect_fmt: FxpFormat | None = None) -> Matrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an HDPT file")
    if len(blob) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated")
    _, version, total_bits, frac_bits, _, rows, cols = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")
    try:
        fmt = FxpFormat(total_bits, frac_bits)
    except ValueError as e:
        raise FormatMismatchError(f"{path}: {e}") from None
    if fmt.total_bits > 16:
        raise FormatMismatchError(f"{path}: declared format wider than 16-bit payload")
    if expect_fmt is not None and fmt != expect_fmt:
        raise FormatMismatchError(f"{path}: file is {fmt}, expected {expect_fmt}")
    expected = rows * cols * 2
    payload = blob[_HEADER.size :]
    if len(payload) != expected:
        raise TruncatedPayloadError(f"{path}: payload {len(payload)} bytes, expected {expected}")
    raw = np.frombuffer(payload, dtype="<i2").astype(np.int64).reshape(rows, cols)
    if raw.size and (raw.min() < fmt.raw_min or raw.max() > fmt.raw_max):
        raise FormatMismatchError(f"{path}: raw values outside declared {fmt} range")
    return Matrix(raw, fmt)


def save_csv(path, m: Matrix) -> None:
    """Debug export: one row per line, exact decimal reals."""
    digits = m.fmt.frac_bits  # 1/2**f terminates within f decimal digits
    with open(path, "w") as fh:
        for r in range(m.rows):
            fh.write(",".join(f"{v / m.fmt.scale:.{digits}f}" for v in m.raw[r]))
            fh.write("\n")

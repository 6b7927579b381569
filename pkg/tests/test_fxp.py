from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdp.fxp import (
    DEFAULT_FORMAT,
    FxpFormat,
    FxpValue,
    fxp_add,
    fxp_mul,
    matmul_fxp,
    quantize,
    quantize_array,
    rne_shift_array,
    split,
    split_array,
)
from oracles import quantize_real, rne_div_pow2, saturate, split_raw

Q8_8 = FxpFormat(16, 8)


class TestFormat:
    def test_parse_roundtrip(self):
        fmt = FxpFormat.parse("Q8.8")
        assert fmt == Q8_8
        assert str(fmt) == "Q8.8"
        assert FxpFormat.parse("Q4.12") == FxpFormat(16, 12)

    @pytest.mark.parametrize("text", ["Q8", "8.8", "Q0.16", "Q1.15", "Qx.y", "Q8.0"])
    def test_bad_formats_rejected(self, text):
        with pytest.raises(ValueError):
            FxpFormat.parse(text)

    def test_range(self):
        assert Q8_8.raw_min == -32768
        assert Q8_8.raw_max == 32767
        assert Q8_8.scale == 256


class TestQuantize:
    def test_zero(self):
        assert quantize(0.0, Q8_8).raw == 0

    def test_exact_value(self):
        assert quantize(2.5, Q8_8).raw == 640

    def test_saturates_high(self):
        # frozen from the arbitrary-precision scaling oracle
        assert quantize_real(200.0, 16, 8) == 32767
        assert quantize(200.0, Q8_8).raw == 32767
        assert quantize(-200.0, Q8_8).raw == -32768

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), float("-inf")])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(ValueError, match="non-finite input"):
            quantize(bad, Q8_8)
        with pytest.raises(ValueError, match="non-finite input"):
            quantize_array(np.array([0.0, bad]), Q8_8)

    @given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
    def test_matches_rational_oracle(self, x):
        assert quantize(x, Q8_8).raw == quantize_real(x, 16, 8)

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_never_leaves_range(self, x):
        raw = quantize(x, Q8_8).raw
        assert Q8_8.raw_min <= raw <= Q8_8.raw_max

    def test_array_matches_scalar(self):
        xs = np.linspace(-130.0, 130.0, 1001)
        raws = quantize_array(xs, Q8_8)
        assert [quantize(float(x), Q8_8).raw for x in xs] == raws.tolist()


class TestSplit:
    def test_positive(self):
        s = split(quantize(2.5, Q8_8))
        assert (s.int_part.value, s.frac_part.value) == (2.0, 0.5)

    def test_small_negative_has_zero_int_part(self):
        s = split(quantize(-0.3, Q8_8))
        assert s.int_part.raw == 0
        assert s.frac_part.raw == quantize(-0.3, Q8_8).raw

    def test_negative(self):
        s = split(quantize(-3.75, Q8_8))
        assert (s.int_part.value, s.frac_part.value) == (-3.0, -0.75)

    def test_exhaustive_reconstruction_and_near_zero(self):
        # every representable Q8.8 raw: int + frac == v, |v| < 1 <=> int == 0
        raws = np.arange(Q8_8.raw_min, Q8_8.raw_max + 1, dtype=np.int64)
        int_vals, frac_raw = split_array(raws, Q8_8)
        assert np.array_equal(int_vals * Q8_8.scale + frac_raw, raws)
        assert np.all(np.abs(frac_raw) < Q8_8.scale)
        assert np.array_equal(int_vals == 0, np.abs(raws) < Q8_8.scale)
        sign_ok = (frac_raw == 0) | (np.sign(frac_raw) == np.sign(raws))
        assert np.all(sign_ok)

    @given(st.integers(min_value=-32768, max_value=32767))
    def test_matches_scalar_oracle(self, raw):
        s = split(FxpValue(raw, Q8_8))
        i, f = split_raw(raw, 8)
        assert s.int_part.raw == i * 256
        assert s.frac_part.raw == f


class TestArithmetic:
    def test_mul_identity(self):
        one = quantize(1.0, Q8_8)
        for raw in (-32768, -257, 0, 100, 32767):
            assert fxp_mul(one, FxpValue(raw, Q8_8)).raw == raw

    def test_add_inverse(self):
        for raw in (-32767, -1, 0, 5, 32767):
            assert fxp_add(FxpValue(raw, Q8_8), FxpValue(-raw, Q8_8)).raw == 0

    def test_mul_exact(self):
        # 2.5 * 3.25 = 8.125, representable: frozen via the rational oracle
        assert (Fraction(640 * 832, 256 * 256)) == Fraction(65, 8)
        assert fxp_mul(quantize(2.5, Q8_8), quantize(3.25, Q8_8)).raw == 2080

    @given(st.integers(-32768, 32767), st.integers(-32768, 32767))
    def test_mul_matches_rational_rne(self, ra, rb):
        got = fxp_mul(FxpValue(ra, Q8_8), FxpValue(rb, Q8_8)).raw
        assert got == saturate(rne_div_pow2(ra * rb, 8), 16)

    @given(st.integers(-32768, 32767), st.integers(-32768, 32767))
    def test_add_saturates(self, ra, rb):
        got = fxp_add(FxpValue(ra, Q8_8), FxpValue(rb, Q8_8)).raw
        assert got == saturate(ra + rb, 16)

    def test_format_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fxp_add(quantize(1.0, Q8_8), quantize(1.0, FxpFormat(16, 12)))


class TestArrayHelpers:
    @given(st.lists(st.integers(-(2**40), 2**40), min_size=1, max_size=32), st.integers(1, 14))
    def test_rne_shift_matches_scalar(self, vals, f):
        arr = np.array(vals, dtype=np.int64)
        assert rne_shift_array(arr, f).tolist() == [rne_div_pow2(v, f) for v in vals]

    @settings(max_examples=25)
    @given(st.integers(0, 2**32))
    def test_matmul_matches_big_int_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.integers(-32768, 32768, size=(3, 5))
        b = rng.integers(-32768, 32768, size=(5, 2))
        got = matmul_fxp(a, b, Q8_8)
        exact = [
            [saturate(rne_div_pow2(sum(int(a[i, t]) * int(b[t, j]) for t in range(5)), 8), 16) for j in range(2)]
            for i in range(3)
        ]
        assert got.tolist() == exact

    def test_determinism(self):
        xs = np.linspace(-5, 5, 257)
        assert np.array_equal(quantize_array(xs, Q8_8), quantize_array(xs.copy(), Q8_8))

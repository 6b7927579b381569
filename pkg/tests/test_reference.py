import math

import numpy as np
import pytest

from hdp.fxp import FxpFormat
from hdp.mask import BlockMask, mask_overlap
from hdp.reference import (
    PRUNED_ZERO,
    AttentionConfig,
    block_abs_sums,
    exact_attention,
    exact_head_scores,
    masked_softmax_attention,
    softmax_rows,
    topk_block_prune,
)
from hdp.tensorio import Gaussian, Matrix, gen_synthetic
from oracles import dense_attention_oracle

Q8_8 = FxpFormat(16, 8)


def _mats(seed, l, d, sigma=2.0):
    return (
        gen_synthetic(l, d, Gaussian(0, sigma), seed, Q8_8),
        gen_synthetic(l, d, Gaussian(0, sigma), seed + 1, Q8_8),
        gen_synthetic(l, d, Gaussian(0, sigma), seed + 2, Q8_8),
    )


class TestExactAttention:
    def test_single_row_softmax_is_one(self):
        cfg = AttentionConfig(1, 2, 1, Q8_8)
        Q = Matrix(np.array([[256, 512]]), Q8_8)
        K = Matrix(np.array([[256, -256]]), Q8_8)
        V = Matrix(np.array([[640, -320]]), Q8_8)
        out = exact_attention(Q, K, V, cfg)
        assert np.allclose(out, V.to_reals(), atol=0, rtol=0)

    def test_zero_queries_average_values(self):
        cfg = AttentionConfig(4, 4, 2, Q8_8)
        rng = np.random.default_rng(3)
        Q = Matrix(np.zeros((4, 4), dtype=np.int64), Q8_8)
        K = Matrix(rng.integers(-1000, 1000, (4, 4)), Q8_8)
        V = Matrix(rng.integers(-1000, 1000, (4, 4)), Q8_8)
        out = exact_attention(Q, K, V, cfg)
        expect = np.repeat(V.to_reals().mean(axis=0, keepdims=True), 4, axis=0)
        assert np.allclose(out, expect, atol=1e-12)

    def test_matches_independent_dense_oracle(self):
        Q, K, V = _mats(100, 4, 4)
        cfg = AttentionConfig(4, 4, 2, Q8_8)
        out = exact_attention(Q, K, V, cfg)
        oracle = dense_attention_oracle(Q.to_reals().tolist(), K.to_reals().tolist(), V.to_reals().tolist(), 2)
        assert np.max(np.abs(out - np.array(oracle))) <= 1e-12

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        p = softmax_rows(rng.normal(size=(16, 16)))
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(6)
        s = rng.normal(size=(8, 8))
        assert np.allclose(softmax_rows(s), softmax_rows(s + 13.25), atol=1e-9)

    def test_shape_mismatch_rejected(self):
        cfg = AttentionConfig(4, 4, 2, Q8_8)
        Q, K, V = _mats(1, 4, 4)
        bad = Matrix(np.zeros((2, 4), dtype=np.int64), Q8_8)
        with pytest.raises(ValueError):
            exact_attention(bad, K, V, cfg)


class TestTopK:
    def test_keep_all(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=(8, 8))
        assert topk_block_prune(s, 1.0) == BlockMask.all_ones(4)

    def test_direct_ordering(self):
        # block importances per row: [2, 4, 6, 8] -> keep the top half
        s = np.zeros((8, 8))
        for j, theta in enumerate([2.0, 4.0, 6.0, 8.0]):
            s[0 :: 2, 2 * j] = theta / 8  # four rows of blocks, all alike
        for i in range(4):
            s[2 * i, ::] = s[0, :]
        mask = topk_block_prune(s, 0.5)
        assert mask.bits.astype(int).tolist() == [[0, 0, 1, 1]] * 4

    def test_matches_bruteforce_sort(self):
        rng = np.random.default_rng(11)
        s = rng.normal(size=(8, 8))
        mask = topk_block_prune(s, 0.25)
        theta = block_abs_sums(s)
        k = math.ceil(0.25 * 4)
        for i in range(4):
            order = sorted(range(4), key=lambda j: (-theta[i, j], j))
            expect = {j for j in order[:k]}
            assert {j for j in range(4) if mask.bits[i, j]} == expect

    def test_row_sums_exact(self):
        rng = np.random.default_rng(12)
        s = rng.normal(size=(16, 16))
        for kf in (0.1, 0.3, 0.5, 0.9, 1.0):
            mask = topk_block_prune(s, kf)
            assert np.all(mask.bits.sum(axis=1) == math.ceil(kf * 8))

    def test_monotone_in_keep_fraction(self):
        rng = np.random.default_rng(13)
        s = rng.normal(size=(16, 16))
        prev = None
        for kf in (0.125, 0.25, 0.5, 0.75, 1.0):
            cur = topk_block_prune(s, kf)
            if prev is not None:
                assert np.all(prev.bits <= cur.bits)
            prev = cur

    def test_tie_break_low_column(self):
        s = np.ones((4, 4))  # every block has importance 4
        mask = topk_block_prune(s, 0.5)
        assert mask.bits.astype(int).tolist() == [[1, 0], [1, 0]]


class TestMaskedSoftmax:
    def test_all_ones_matches_exact(self):
        Q, K, V = _mats(20, 8, 8)
        cfg = AttentionConfig(8, 8, 1, Q8_8)
        s = exact_head_scores(Q, K, cfg)[0]
        got = masked_softmax_attention(s, BlockMask.all_ones(4), V.to_reals())
        assert np.allclose(got, exact_attention(Q, K, V, cfg), atol=1e-12)

    def test_single_block_row_mass(self):
        rng = np.random.default_rng(21)
        s = rng.normal(size=(4, 4))
        bits = np.zeros((2, 2), dtype=bool)
        bits[0, 1] = True
        bits[1, 0] = True
        v = np.eye(4)
        out = masked_softmax_attention(s, BlockMask(bits), v)
        # row 0 mass sits entirely on columns 2,3
        assert out[0, 0] == out[0, 1] == 0.0
        assert out[0, 2] + out[0, 3] == pytest.approx(1.0, abs=1e-12)

    def test_matches_index_set_oracle(self):
        rng = np.random.default_rng(22)
        s = rng.normal(size=(8, 8))
        bits = rng.random((4, 4)) < 0.5
        bits[:, 0] = True
        v = rng.normal(size=(8, 3))
        got = masked_softmax_attention(s, BlockMask(bits), v)
        keep = np.kron(bits, np.ones((2, 2), dtype=bool))
        expect = np.zeros((8, 3))
        for i in range(8):
            idx = [j for j in range(8) if keep[i, j]]
            e = np.exp(s[i, idx] - max(s[i, idx]))
            p = e / e.sum()
            expect[i] = p @ v[idx]
        assert np.allclose(got, expect, atol=1e-12)

    def test_fully_pruned_row_is_zero(self):
        s = np.ones((4, 4))
        bits = np.array([[False, False], [True, True]])
        out = masked_softmax_attention(s, BlockMask(bits), np.ones((4, 2)))
        assert not out[0:2].any()
        assert out[2:4].any()

    def test_zero_logit_mode(self):
        rng = np.random.default_rng(23)
        s = rng.normal(size=(4, 4))
        bits = np.array([[True, False], [False, True]])
        v = rng.normal(size=(4, 2))
        got = masked_softmax_attention(s, BlockMask(bits), v, PRUNED_ZERO)
        z = np.where(np.kron(bits, np.ones((2, 2), dtype=bool)), s, 0.0)
        assert np.allclose(got, softmax_rows(z) @ v, atol=1e-12)


class TestMaskOverlap:
    def test_identity_overlap(self):
        rng = np.random.default_rng(30)
        m = BlockMask(rng.random((4, 4)) < 0.5)
        assert mask_overlap(m, m) == 1.0

    def test_empty_reference(self):
        m = BlockMask(np.zeros((2, 2), dtype=bool))
        assert mask_overlap(m, BlockMask.all_ones(2)) == 1.0

    def test_partial(self):
        a = BlockMask(np.array([[True, True], [False, False]]))
        b = BlockMask(np.array([[True, False], [False, False]]))
        assert mask_overlap(a, b) == 0.5

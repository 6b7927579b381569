"""Integer-driven block/head pruning attention with fraction approximation.

The pipeline for one head:

    split Q, K -> integer score IQ.IK^T -> 2x2 block importances ->
    per-row thresholds -> block mask -> head keep/prune decision ->
    (if kept) approximate scores = masked integer score + IQ.FK^T + FQ.IK^T
    -> scale by 1/sqrt(d_h) -> masked softmax -> P.V in fixed point.

Every decision (thresholds, mask bits, head keep) is computed in exact
integer/rational arithmetic, so masks are bit-deterministic.  The only
float stages are the documented 1/sqrt(d_h) narrowing and the softmax,
which uses scalar math.exp and left-to-right accumulation so independent
scalar reimplementations can match it bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from fractions import Fraction

import numpy as np

from .fxp import FxpFormat, saturate_array, rne_shift_array, scale_by_rsqrt, split_array
from .mask import BLOCK, BlockMask
from .reference import PRUNED_EXCLUDE, PRUNED_LOGIT_MODES, PRUNED_ZERO, AttentionConfig
from .tensorio import Matrix

FRAC_COMPONENTS = 2  # IQ.FK and FQ.IK
AV_QUADRANTS = 4  # int/frac of P crossed with int/frac of V


@dataclass(frozen=True)
class PruneParams:
    """block_ratio interpolates the row threshold, head_threshold gates heads.

    block_ratio >= 0 pulls the threshold from the row mean toward its max;
    block_ratio < 0 pulls it toward the row min.  head_threshold is the
    strict lower bound a head's total importance must exceed to survive.
    """

    block_ratio: float = 0.0
    head_threshold: float = 0.0

    def __post_init__(self):
        if not -1.0 < self.block_ratio < 1.0:
            raise ValueError(f"block_ratio must lie in (-1, 1), got {self.block_ratio}")
        if self.head_threshold < 0:
            raise ValueError("head_threshold must be >= 0")


@dataclass
class PruneStats:
    blocks_total: int = 0
    blocks_pruned: int = 0
    heads_total: int = 0
    heads_pruned: int = 0
    macs_integer: int = 0
    macs_frac_executed: int = 0
    macs_frac_skipped: int = 0
    macs_av: int = 0
    k_elements_fetch_skipped: int = 0

    def merge(self, other: "PruneStats") -> "PruneStats":
        return PruneStats(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def block_pruned_fraction(self) -> float:
        return self.blocks_pruned / self.blocks_total if self.blocks_total else 0.0

    def head_pruned_fraction(self) -> float:
        return self.heads_pruned / self.heads_total if self.heads_total else 0.0


@dataclass(frozen=True)
class BlockImportance:
    """Per-block absolute sums of the integer score matrix plus row stats.

    values[i][j] is integer-valued by construction (sums of integer
    products), so row minima/maxima/sums are exact, and row means are the
    exact rationals row_sum[i] / blocks_per_row.
    """

    values: np.ndarray
    row_min: np.ndarray
    row_max: np.ndarray
    row_sum: np.ndarray
    head_total: int

    @property
    def blocks_per_row(self) -> int:
        return self.values.shape[1]

    def row_mean(self, i: int) -> Fraction:
        return Fraction(int(self.row_sum[i]), self.blocks_per_row)


def integer_score(iq: np.ndarray, ik: np.ndarray) -> np.ndarray:
    """IQ . IK^T over integer parts; exact in widened accumulators."""
    iq = np.asarray(iq, dtype=np.int64)
    ik = np.asarray(ik, dtype=np.int64)
    if iq.ndim != 2 or ik.ndim != 2 or iq.shape[1] != ik.shape[1]:
        raise ValueError(f"shape mismatch: {iq.shape} vs {ik.shape}")
    return iq @ ik.T


def block_importance(int_scores: np.ndarray) -> BlockImportance:
    l = int_scores.shape[0]
    if int_scores.shape != (l, l) or l % BLOCK != 0:
        raise ValueError("integer score matrix must be square with even side")
    n = l // BLOCK
    theta = np.abs(int_scores).reshape(n, BLOCK, n, BLOCK).sum(axis=(1, 3))
    return BlockImportance(
        values=theta,
        row_min=theta.min(axis=1),
        row_max=theta.max(axis=1),
        row_sum=theta.sum(axis=1),
        head_total=int(theta.sum()),
    )


def row_threshold(minimum, maximum, mean, block_ratio: float) -> Fraction:
    """Exact per-row pruning threshold.

    ratio >= 0:  ratio * max + (1 - ratio) * mean
    ratio <  0: -ratio * min + (1 + ratio) * mean

    The ratio converts exactly to a binary rational, so callers can compare
    block importances against the result without rounding.
    """
    if not -1.0 < block_ratio < 1.0:
        raise ValueError(f"block_ratio must lie in (-1, 1), got {block_ratio}")
    r = Fraction(block_ratio)
    mean = Fraction(mean)
    if r >= 0:
        return r * Fraction(int(maximum)) + (1 - r) * mean
    return -r * Fraction(int(minimum)) + (1 + r) * mean


def build_mask(imp: BlockImportance, block_ratio: float) -> BlockMask:
    """Strict theta < threshold prunes; equality keeps the block."""
    n = imp.values.shape[0]
    bits = np.ones((n, imp.blocks_per_row), dtype=bool)
    for i in range(n):
        th = row_threshold(int(imp.row_min[i]), int(imp.row_max[i]), imp.row_mean(i), block_ratio)
        bits[i] = [theta >= th for theta in imp.values[i].tolist()]
    return BlockMask(bits)


def head_decision(head_total: int, head_threshold: float) -> bool:
    """Keep the head iff its total importance strictly exceeds the threshold."""
    if head_total < 0:
        raise ValueError("head importance cannot be negative")
    return head_total > head_threshold


def approximate_scores(
    iq: np.ndarray,
    fq_raw: np.ndarray,
    ik: np.ndarray,
    fk_raw: np.ndarray,
    masked_int_scores: np.ndarray,
    mask: BlockMask,
    frac_bits: int,
) -> np.ndarray:
    """Kept-block scores = integer score + IQ.FK^T + FQ.IK^T, exact raws.

    Returns widened raws at scale 2**frac_bits.  Pruned blocks stay at the
    masked integer value (zero).  The FQ.FK^T term is never formed; dropping
    it is what prunes near-zero pairs automatically.
    """
    keep = mask.expand()
    frac1 = np.asarray(iq, dtype=np.int64) @ np.asarray(fk_raw, dtype=np.int64).T
    frac2 = np.asarray(fq_raw, dtype=np.int64) @ np.asarray(ik, dtype=np.int64).T
    acc = (np.asarray(masked_int_scores, dtype=np.int64) << frac_bits) + np.where(
        keep, frac1 + frac2, 0
    )
    return acc


def masked_softmax_probs(
    score_raw: np.ndarray, mask: BlockMask, fmt: FxpFormat, pruned_logit: str = PRUNED_EXCLUDE
) -> np.ndarray:
    """Row softmax over surviving entries, quantized back to the format.

    Scalar evaluation on purpose: max-subtraction, math.exp per element and
    a left-to-right sum define the result bit-exactly.  A row with nothing
    surviving quantizes to all-zero probabilities.
    """
    if pruned_logit not in PRUNED_LOGIT_MODES:
        raise ValueError(f"pruned_logit must be one of {PRUNED_LOGIT_MODES}")
    l = score_raw.shape[0]
    scale = fmt.scale
    keep = mask.expand()
    p_raw = np.zeros((l, l), dtype=np.int64)
    for i in range(l):
        if pruned_logit == PRUNED_ZERO:
            idx = range(l)
        else:
            idx = [j for j in range(l) if keep[i, j]]
            if not idx:
                continue
        s = [score_raw[i, j] / scale for j in idx]
        m = max(s)
        es = [math.exp(x - m) for x in s]
        total = 0.0
        for e in es:
            total += e
        for j, e in zip(idx, es):
            p_raw[i, j] = round(e / total * scale)
    return p_raw


def attend_values(p_raw: np.ndarray, v_raw: np.ndarray, fmt: FxpFormat) -> np.ndarray:
    """P . V through the four int/frac quadrant products.

    All four quadrants accumulate in widened raws and are narrowed once, so
    the result equals a direct fixed-point matmul of the unsplit operands.
    """
    f = fmt.frac_bits
    ip, fp = split_array(p_raw, fmt)
    iv, fv = split_array(v_raw, fmt)
    acc = (
        ((ip @ iv) << (2 * f))
        + ((ip @ fv) << f)
        + ((fp @ iv) << f)
        + (fp @ fv)
    )
    return saturate_array(rne_shift_array(acc, f), fmt)


def _head_stats(l: int, d_h: int, mask: BlockMask, head_kept: bool) -> PruneStats:
    n = mask.rows_of_blocks
    per_block_fracs = FRAC_COMPONENTS * BLOCK * BLOCK * d_h  # 2 components x 4 elements x d_h
    stats = PruneStats(
        blocks_total=n * n,
        blocks_pruned=mask.pruned(),
        heads_total=1,
        heads_pruned=0 if head_kept else 1,
        macs_integer=l * l * d_h,
    )
    if head_kept:
        stats.macs_frac_executed = per_block_fracs * mask.kept()
        stats.macs_frac_skipped = per_block_fracs * mask.pruned()
        stats.macs_av = AV_QUADRANTS * l * l * d_h
        stats.k_elements_fetch_skipped = 2 * BLOCK * d_h * mask.pruned()
    else:
        stats.macs_frac_skipped = per_block_fracs * n * n
        stats.k_elements_fetch_skipped = 2 * BLOCK * d_h * n * n
    return stats


def hdp_attention_head(
    q_raw: np.ndarray,
    k_raw: np.ndarray,
    v_raw: np.ndarray,
    params: PruneParams,
    fmt: FxpFormat,
    pruned_logit: str = PRUNED_EXCLUDE,
) -> tuple[np.ndarray, BlockMask, PruneStats]:
    """Run the full pruning pipeline for one head of raw Q/K/V slices.

    Returns (output raws l x d_h, block mask, work/pruning counters).  A
    pruned head returns an all-zero output with every post-decision stage
    skipped.
    """
    l, d_h = q_raw.shape
    if k_raw.shape != (l, d_h) or v_raw.shape != (l, d_h):
        raise ValueError("Q/K/V head slices must share one l x d_h shape")
    if l % BLOCK != 0:
        raise ValueError("sequence length must be even for 2x2 blocking")

    iq, fq = split_array(q_raw, fmt)
    ik, fk = split_array(k_raw, fmt)
    int_scores = integer_score(iq, ik)
    imp = block_importance(int_scores)
    bmask = build_mask(imp, params.block_ratio)
    head_kept = head_decision(imp.head_total, params.head_threshold)
    stats = _head_stats(l, d_h, bmask, head_kept)

    if not head_kept:
        return np.zeros((l, d_h), dtype=np.int64), bmask, stats

    masked_int = np.where(bmask.expand(), int_scores, 0)
    score_acc = approximate_scores(iq, fq, ik, fk, masked_int, bmask, fmt.frac_bits)
    score_raw = scale_by_rsqrt(score_acc, d_h, fmt)
    p_raw = masked_softmax_probs(score_raw, bmask, fmt, pruned_logit)
    out_raw = attend_values(p_raw, v_raw, fmt)
    return out_raw, bmask, stats


def hdp_attention(
    Q: Matrix,
    K: Matrix,
    V: Matrix,
    params: PruneParams,
    cfg: AttentionConfig,
    pruned_logit: str = PRUNED_EXCLUDE,
) -> tuple[Matrix, list[BlockMask], PruneStats]:
    """Multi-head pruning attention: heads run independently, outputs concat."""
    cfg.require_blockable()
    for name, m in (("Q", Q), ("K", K), ("V", V)):
        if (m.rows, m.cols) != (cfg.seq_len, cfg.model_dim):
            raise ValueError(f"{name} is {m.rows}x{m.cols}, config wants {cfg.seq_len}x{cfg.model_dim}")
        if m.fmt != cfg.fmt:
            raise ValueError(f"{name} format {m.fmt} differs from config {cfg.fmt}")
    d_h = cfg.head_dim
    out = np.zeros((cfg.seq_len, cfg.model_dim), dtype=np.int64)
    masks: list[BlockMask] = []
    stats = PruneStats()
    for h in range(cfg.num_heads):
        head_out, head_mask, head_stats = hdp_attention_head(
            Q.head(h, d_h), K.head(h, d_h), V.head(h, d_h), params, cfg.fmt, pruned_logit
        )
        out[:, h * d_h : (h + 1) * d_h] = head_out
        masks.append(head_mask)
        stats = stats.merge(head_stats)
    return Matrix(out, cfg.fmt), masks, stats

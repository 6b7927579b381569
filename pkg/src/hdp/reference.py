"""Real-arithmetic oracles: exact attention and the Top-K block-pruning baseline.

Everything here runs in float64 on dequantized values.  These functions are
the ground truth the fixed-point pipeline and the co-processor simulator
are measured against, so they must stay independent of both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fxp import DEFAULT_FORMAT, FxpFormat
from .mask import BLOCK, BlockMask
from .tensorio import Matrix

# Pruned entries either drop out of the softmax entirely (probability 0,
# survivors renormalize) or stay in as literal zero logits.
PRUNED_EXCLUDE = "exclude"
PRUNED_ZERO = "zero"
PRUNED_LOGIT_MODES = (PRUNED_EXCLUDE, PRUNED_ZERO)


@dataclass(frozen=True)
class AttentionConfig:
    seq_len: int
    model_dim: int
    num_heads: int
    fmt: FxpFormat = field(default_factory=lambda: DEFAULT_FORMAT)

    def __post_init__(self):
        if self.seq_len < 1 or self.model_dim < 1 or self.num_heads < 1:
            raise ValueError("seq_len, model_dim, num_heads must be positive")
        if self.model_dim % self.num_heads != 0:
            raise ValueError("model_dim must be divisible by num_heads")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def require_blockable(self):
        """Block pruning needs an even sequence length and head_dim >= 2."""
        if self.seq_len % BLOCK != 0 or self.seq_len < 2:
            raise ValueError("seq_len must be even and >= 2 for 2x2 blocking")
        if self.head_dim < 2:
            raise ValueError("head_dim must be >= 2")


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_shapes(Q: Matrix, K: Matrix, V: Matrix, cfg: AttentionConfig):
    for name, m in (("Q", Q), ("K", K), ("V", V)):
        if (m.rows, m.cols) != (cfg.seq_len, cfg.model_dim):
            raise ValueError(
                f"{name} is {m.rows}x{m.cols}, config wants {cfg.seq_len}x{cfg.model_dim}"
            )


def exact_head_scores(Q: Matrix, K: Matrix, cfg: AttentionConfig) -> list[np.ndarray]:
    """Per-head scaled score matrices Q_h K_h^T / sqrt(d_h), float64."""
    d_h = cfg.head_dim
    q = Q.to_reals()
    k = K.to_reals()
    out = []
    for h in range(cfg.num_heads):
        sl = slice(h * d_h, (h + 1) * d_h)
        out.append(q[:, sl] @ k[:, sl].T / math.sqrt(d_h))
    return out


def exact_attention(Q: Matrix, K: Matrix, V: Matrix, cfg: AttentionConfig) -> np.ndarray:
    """Golden multi-head attention on dequantized inputs, heads concatenated."""
    _check_shapes(Q, K, V, cfg)
    d_h = cfg.head_dim
    v = V.to_reals()
    out = np.empty((cfg.seq_len, cfg.model_dim))
    for h, scores in enumerate(exact_head_scores(Q, K, cfg)):
        sl = slice(h * d_h, (h + 1) * d_h)
        out[:, sl] = softmax_rows(scores) @ v[:, sl]
    return out


def block_abs_sums(scores: np.ndarray) -> np.ndarray:
    """Importance of every 2x2 block: sum of absolute values inside it."""
    l = scores.shape[0]
    if scores.shape != (l, l) or l % BLOCK != 0:
        raise ValueError("scores must be square with even side")
    a = np.abs(scores)
    n = l // BLOCK
    return a.reshape(n, BLOCK, n, BLOCK).sum(axis=(1, 3))


def topk_block_prune(scores: np.ndarray, keep_fraction: float) -> BlockMask:
    """Keep the ceil(keep_fraction * l/2) most important blocks per block-row.

    Ties go to the lower column index so the mask is deterministic.
    """
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must be in (0, 1]")
    theta = block_abs_sums(scores)
    n = theta.shape[0]
    k = math.ceil(keep_fraction * n)
    bits = np.zeros((n, n), dtype=bool)
    for i in range(n):
        order = np.lexsort((np.arange(n), -theta[i]))  # by -importance, then column
        bits[i, order[:k]] = True
    return BlockMask(bits)


def masked_softmax_attention(
    scores: np.ndarray,
    mask: BlockMask,
    v_head: np.ndarray,
    pruned_logit: str = PRUNED_EXCLUDE,
) -> np.ndarray:
    """One head of attention with pruned blocks handled per pruned_logit.

    exclude: pruned entries get probability 0 and the survivors renormalize;
    a fully pruned row produces a zero output row.
    zero: pruned entries participate as logit 0 (their score is literally
    zeroed), so every entry keeps some probability mass.
    """
    if pruned_logit not in PRUNED_LOGIT_MODES:
        raise ValueError(f"pruned_logit must be one of {PRUNED_LOGIT_MODES}")
    l = scores.shape[0]
    if mask.rows_of_blocks * BLOCK != l:
        raise ValueError("mask does not match score matrix")
    keep = mask.expand()
    probs = np.zeros_like(scores)
    if pruned_logit == PRUNED_ZERO:
        z = np.where(keep, scores, 0.0)
        probs = softmax_rows(z)
    else:
        for i in range(l):
            row_keep = keep[i]
            if not row_keep.any():
                continue
            s = scores[i, row_keep]
            e = np.exp(s - s.max())
            probs[i, row_keep] = e / e.sum()
    return probs @ v_head

"""Hybrid dynamic pruning for attention.

Fixed-point attention with runtime 2x2 block pruning, early head pruning,
and integer/fraction score approximation, plus real-arithmetic oracles
(exact attention, Top-K block pruning) and a functional cost simulator of
the co-processor dataflow.
"""

from .fxp import DEFAULT_FORMAT, FxpFormat, FxpSplit, FxpValue, fxp_add, fxp_mul, quantize, split
from .mask import BlockMask, mask_overlap
from .pruning import (
    BlockImportance,
    PruneParams,
    PruneStats,
    block_importance,
    build_mask,
    hdp_attention,
    hdp_attention_head,
    head_decision,
    integer_score,
    row_threshold,
)
from .reference import (
    PRUNED_EXCLUDE,
    PRUNED_ZERO,
    AttentionConfig,
    exact_attention,
    masked_softmax_attention,
    topk_block_prune,
)
from .simulator import SimReport, hw_softmax, schedule_tiles, simulate_layer
from .tensorio import Gaussian, Matrix, Uniform, gen_synthetic, load_tensor, save_tensor

__all__ = [
    "DEFAULT_FORMAT",
    "FxpFormat",
    "FxpSplit",
    "FxpValue",
    "fxp_add",
    "fxp_mul",
    "quantize",
    "split",
    "BlockMask",
    "mask_overlap",
    "BlockImportance",
    "PruneParams",
    "PruneStats",
    "block_importance",
    "build_mask",
    "hdp_attention",
    "hdp_attention_head",
    "head_decision",
    "integer_score",
    "row_threshold",
    "PRUNED_EXCLUDE",
    "PRUNED_ZERO",
    "AttentionConfig",
    "exact_attention",
    "masked_softmax_attention",
    "topk_block_prune",
    "SimReport",
    "hw_softmax",
    "schedule_tiles",
    "simulate_layer",
    "Gaussian",
    "Matrix",
    "Uniform",
    "gen_synthetic",
    "load_tensor",
    "save_tensor",
]

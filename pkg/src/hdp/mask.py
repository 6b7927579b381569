"""Binary keep/prune masks over the 2x2 blocking of an attention score matrix."""

from __future__ import annotations

import numpy as np

BLOCK = 2  # scores are pruned in 2x2 tiles


class BlockMask:
    """(l/2) x (l/2) keep matrix: bit 1 keeps a block, 0 prunes it."""

    __slots__ = ("bits",)

    def __init__(self, bits: np.ndarray):
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise ValueError("mask must be square")
        bits = bits.copy()
        bits.flags.writeable = False
        self.bits = bits

    @classmethod
    def all_ones(cls, n_blocks: int) -> "BlockMask":
        return cls(np.ones((n_blocks, n_blocks), dtype=bool))

    @property
    def rows_of_blocks(self) -> int:
        return self.bits.shape[0]

    @property
    def cols_of_blocks(self) -> int:
        return self.bits.shape[1]

    def kept(self) -> int:
        return int(self.bits.sum())

    def pruned(self) -> int:
        return int(self.bits.size - self.bits.sum())

    def expand(self) -> np.ndarray:
        """Element-level l x l boolean keep matrix."""
        return np.kron(self.bits, np.ones((BLOCK, BLOCK), dtype=bool))

    def __eq__(self, other) -> bool:
        return isinstance(other, BlockMask) and bool(np.array_equal(self.bits, other.bits))

    def __repr__(self) -> str:
        n = self.rows_of_blocks
        return f"BlockMask({n}x{n}, kept={self.kept()})"


def mask_overlap(reference: BlockMask, other: BlockMask) -> float:
    """|kept(reference) intersect kept(other)| / |kept(reference)|.

    Defined as 1.0 when the reference keeps nothing (vacuous agreement).
    """
    if reference.bits.shape != other.bits.shape:
        raise ValueError("mask shapes differ")
    ref_kept = reference.kept()
    if ref_kept == 0:
        return 1.0
    return float(np.logical_and(reference.bits, other.bits).sum()) / ref_kept


def save_masks_csv(path, masks: list[BlockMask]) -> None:
    """One line per (head, block_row): head,row,bit0,bit1,..."""
    with open(path, "w") as fh:
        fh.write("head,block_row,bits...\n")
        for h, mask in enumerate(masks):
            for r in range(mask.rows_of_blocks):
                bits = ",".join(str(int(b)) for b in mask.bits[r])
                fh.write(f"{h},{r},{bits}\n")

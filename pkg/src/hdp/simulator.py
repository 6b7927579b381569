"""Functional-plus-cost model of the pruning attention co-processor.

Models the dataflow: a tiled output-stationary matmul on a 2x4 array of
processing elements (each PE owns one 2x2 output block), a sparsity engine
consuming a stream of block-importance events, fetch-upon-mask traffic
accounting for the fraction passes, and a polynomial softmax unit.

Functional contract: integer scores and masks are bit-identical to the
pruning pipeline; the final output differs only through the softmax
unit, whose deviation from exact softmax is tracked per run.  Counters
(MACs, tile steps, sparsity-engine events, DRAM element traffic) are the
cost model; no cycle-level pipelining is attempted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fxp import FxpFormat, saturate_array, rne_shift_array, scale_by_rsqrt, split_array
from .mask import BLOCK, BlockMask
from .pruning import PruneParams
from .reference import PRUNED_EXCLUDE, PRUNED_LOGIT_MODES, PRUNED_ZERO, AttentionConfig
from .tensorio import Matrix

TILE_N = 4  # rows of an A (and C) tile
TILE_M = 8  # cols of a B (and C) tile
TILE_K = 4  # depth consumed per tile step

PE_ROWS = 2  # the PE array is 2 x 4; one PE accumulates one 2x2 block
PE_COLS = 4


# --- tiling ---


@dataclass(frozen=True)
class TileSchedule:
    """Loop-nest order for C = A @ B with 4x4 A tiles and 4x8 B/C tiles.

    Steps iterate i (output rows, step 4), then j (output cols, step 8),
    then k (depth, step 4) innermost, so each C tile stays resident in the
    PE accumulators for D/4 consecutive steps (output stationary).
    """

    n: int
    m: int
    d: int
    steps: tuple

    def steps_per_tile(self) -> int:
        return self.d // TILE_K


def schedule_tiles(rows_a: int, cols_a: int, cols_b: int) -> TileSchedule:
    if rows_a % TILE_N or cols_b % TILE_M or cols_a % TILE_K:
        raise ValueError(
            f"non-tileable dims: {rows_a}x{cols_a} @ {cols_a}x{cols_b} "
            f"needs multiples of ({TILE_N}, {TILE_K}, {TILE_M})"
        )
    steps = tuple(
        (i, j, k)
        for i in range(0, rows_a, TILE_N)
        for j in range(0, cols_b, TILE_M)
        for k in range(0, cols_a, TILE_K)
    )
    return TileSchedule(n=rows_a, m=cols_b, d=cols_a, steps=steps)


# --- PE array ---


class PEArray:
    """2x4 grid of output-stationary PEs holding one 4x8 C tile.

    Each PE owns a 2x2 accumulator bank; when the tile finishes its last
    depth step the PE reports the absolute sum of its accumulators as the
    block importance.
    """

    def __init__(self):
        self.acc = np.zeros((TILE_N, TILE_M), dtype=np.int64)
        self.mac_count = 0

    def start_tile(self):
        self.acc[:] = 0

    def accumulate(self, a_tile: np.ndarray, b_tile: np.ndarray):
        self.acc += a_tile @ b_tile
        self.mac_count += TILE_N * TILE_M * TILE_K

    def importances(self) -> np.ndarray:
        """Per-PE |acc| sums at tile completion: a 2x4 grid of block scores."""
        return np.abs(self.acc).reshape(PE_ROWS, BLOCK, PE_COLS, BLOCK).sum(axis=(1, 3))


# --- sparsity engine ---


@dataclass(frozen=True)
class Importance:
    row: int
    col: int
    theta: int


@dataclass(frozen=True)
class EndRow:
    row: int


@dataclass(frozen=True)
class EndHead:
    pass


class ProtocolError(Exception):
    """Sparsity-engine event arrived out of stream order."""


class SparsityEngine:
    """Consumes block importances; emits mask rows at END_R, head gate at END_H.

    Tracks running min / max / total per block-row.  At END_R the row
    threshold is evaluated with exact integer cross-multiplication (the
    pruning ratio enters as its exact binary fraction), and a block is
    pruned when theta - threshold is negative.  At END_H the accumulated
    head total is compared against the head threshold.
    """

    def __init__(self, n_block_rows: int, params: PruneParams):
        self.n_block_rows = n_block_rows
        self._ratio_num, self._ratio_den = float(params.block_ratio).as_integer_ratio()
        self._head_threshold = params.head_threshold
        self._rows: dict[int, list[tuple[int, int]]] = {}
        self._row_min: dict[int, int] = {}
        self._row_max: dict[int, int] = {}
        self._row_sum: dict[int, int] = {}
        self._mask_rows: dict[int, list[bool]] = {}
        self.head_total = 0
        self.end_r_count = 0
        self.end_h_count = 0
        self.head_kept: bool | None = None

    def step(self, event) -> None:
        if isinstance(event, Importance):
            self._on_importance(event)
        elif isinstance(event, EndRow):
            self._on_end_row(event.row)
        elif isinstance(event, EndHead):
            self._on_end_head()
        else:
            raise ProtocolError(f"unknown event {event!r}")

    def _on_importance(self, ev: Importance):
        if not 0 <= ev.row < self.n_block_rows:
            raise ProtocolError(f"importance for out-of-range row {ev.row}")
        theta = int(ev.theta)
        entries = self._rows.setdefault(ev.row, [])
        entries.append((ev.col, theta))
        self._row_min[ev.row] = min(self._row_min.get(ev.row, theta), theta)
        self._row_max[ev.row] = max(self._row_max.get(ev.row, theta), theta)
        self._row_sum[ev.row] = self._row_sum.get(ev.row, 0) + theta
        self.head_total += theta

    def _on_end_row(self, row: int):
        entries = self._rows.get(row)
        if not entries:
            raise ProtocolError(f"END_R for row {row} before any importance")
        if row in self._mask_rows:
            raise ProtocolError(f"duplicate END_R for row {row}")
        count = len(entries)
        if sorted(col for col, _ in entries) != list(range(count)):
            raise ProtocolError(f"row {row}: importance columns not contiguous from 0")
        rn, rd = self._ratio_num, self._ratio_den
        # threshold as num/den with den > 0; prune iff theta*den - num < 0
        if rn >= 0:
            num = rn * self._row_max[row] * count + (rd - rn) * self._row_sum[row]
        else:
            num = -rn * self._row_min[row] * count + (rd + rn) * self._row_sum[row]
        den = rd * count
        bits = [False] * count
        for col, theta in entries:
            bits[col] = theta * den - num >= 0
        self._mask_rows[row] = bits
        self.end_r_count += 1

    def _on_end_head(self):
        if len(self._mask_rows) != self.n_block_rows:
            raise ProtocolError("END_H before END_R of every block row")
        self.end_h_count += 1
        self.head_kept = self.head_total > self._head_threshold

    def mask_row(self, row: int) -> list[bool]:
        """Mask bits emitted for one block-row (available after its END_R)."""
        if row not in self._mask_rows:
            raise ProtocolError(f"mask row {row} not emitted yet")
        return list(self._mask_rows[row])

    def mask(self) -> BlockMask:
        if len(self._mask_rows) != self.n_block_rows:
            raise ProtocolError("mask requested before all rows ended")
        return BlockMask(np.array([self._mask_rows[r] for r in range(self.n_block_rows)]))


# --- passes ---


@dataclass
class PassCounters:
    tile_steps: int = 0
    macs_int: int = 0
    macs_frac1: int = 0
    macs_frac2: int = 0
    macs_av_ii: int = 0
    macs_av_if: int = 0
    macs_av_fi: int = 0
    macs_av_ff: int = 0
    k_elements_fetched: int = 0
    k_elements_fetch_skipped: int = 0


def run_integer_pass(
    iq: np.ndarray, ik: np.ndarray, schedule: TileSchedule
) -> tuple[np.ndarray, list, PassCounters]:
    """Tiled IQ . IK^T; returns (integer scores, event stream, counters).

    The event stream interleaves one Importance per completed 2x2 block
    (PE-grid order within a tile), END_R after each finished block-row,
    and a final END_H.
    """
    iq = np.asarray(iq, dtype=np.int64)
    b = np.asarray(ik, dtype=np.int64).T
    l = schedule.n
    out = np.zeros((l, schedule.m), dtype=np.int64)
    events: list = []
    pe = PEArray()
    counters = PassCounters()
    last_k = schedule.d - TILE_K
    last_j = schedule.m - TILE_M
    for (i, j, k) in schedule.steps:
        if k == 0:
            pe.start_tile()
        pe.accumulate(iq[i : i + TILE_N, k : k + TILE_K], b[k : k + TILE_K, j : j + TILE_M])
        counters.tile_steps += 1
        if k == last_k:
            out[i : i + TILE_N, j : j + TILE_M] = pe.acc
            grid = pe.importances()
            for pr in range(PE_ROWS):
                for pc in range(PE_COLS):
                    events.append(Importance(i // BLOCK + pr, j // BLOCK + pc, int(grid[pr, pc])))
            if j == last_j:
                events.append(EndRow(i // BLOCK))
                events.append(EndRow(i // BLOCK + 1))
    events.append(EndHead())
    counters.macs_int = pe.mac_count
    return out, events, counters


def run_frac_pass(
    iq: np.ndarray,
    fq_raw: np.ndarray,
    ik: np.ndarray,
    fk_raw: np.ndarray,
    masked_int_scores: np.ndarray,
    mask: BlockMask,
    schedule: TileSchedule,
    frac_bits: int,
) -> tuple[np.ndarray, PassCounters]:
    """Fetch-upon-mask fraction passes plus the adder stage.

    Both fraction products run over kept blocks only; a tile step with all
    eight blocks pruned is skipped outright.  K-side fetches are counted
    per block event: a kept block costs 2 rows x d_h elements for each of
    FK and IK, a pruned block skips the same amount.
    """
    iq = np.asarray(iq, dtype=np.int64)
    fq = np.asarray(fq_raw, dtype=np.int64)
    bik = np.asarray(ik, dtype=np.int64).T
    bfk = np.asarray(fk_raw, dtype=np.int64).T
    l = schedule.n
    d_h = schedule.d
    frac = np.zeros((l, l), dtype=np.int64)
    counters = PassCounters()
    per_block_mac = BLOCK * BLOCK * TILE_K
    for (i, j, k) in schedule.steps:
        tile_bits = mask.bits[i // BLOCK : i // BLOCK + PE_ROWS, j // BLOCK : j // BLOCK + PE_COLS]
        if not tile_bits.any():
            continue
        counters.tile_steps += 1
        for pr in range(PE_ROWS):
            for pc in range(PE_COLS):
                if not tile_bits[pr, pc]:
                    continue
                r0 = i + pr * BLOCK
                c0 = j + pc * BLOCK
                a_rows = slice(r0, r0 + BLOCK)
                b_cols = slice(c0, c0 + BLOCK)
                frac[a_rows, b_cols] += iq[a_rows, k : k + TILE_K] @ bfk[k : k + TILE_K, b_cols]
                frac[a_rows, b_cols] += fq[a_rows, k : k + TILE_K] @ bik[k : k + TILE_K, b_cols]
                counters.macs_frac1 += per_block_mac
                counters.macs_frac2 += per_block_mac
    fetch_per_block = 2 * BLOCK * d_h  # FK rows + IK rows for one block
    counters.k_elements_fetched = fetch_per_block * mask.kept()
    counters.k_elements_fetch_skipped = fetch_per_block * mask.pruned()
    score_acc = (np.asarray(masked_int_scores, dtype=np.int64) << frac_bits) + frac
    return score_acc, counters


# --- softmax unit ---

_LN2 = 0.6931471805599453
# e^r on (-ln2, 0] as 1 + C1*r + C2*r^2, endpoints pinned to 1 and 1/2 so
# consecutive power-of-two ranges join continuously (keeps the map monotone).
_EXP_C1 = 0.9696978590150477
_EXP_C2 = 0.3582938018588506
_RECIP_A = 48.0 / 17.0
_RECIP_B = 32.0 / 17.0


def _approx_exp_nonpos(x: np.ndarray) -> np.ndarray:
    """Quadratic range-reduced e^x for x <= 0: x = -k*ln2 + r, e^x = 2^-k p(r)."""
    t = -np.asarray(x, dtype=np.float64)
    k = np.floor(t / _LN2)
    r = -(t - k * _LN2)
    p = 1.0 + r * (_EXP_C1 + _EXP_C2 * r)
    return np.ldexp(p, -k.astype(np.int64))


def _approx_recip(s: float) -> float:
    """Linear-seed reciprocal with one Newton step on the [0.5, 1) mantissa.

    An exact power of two (mantissa 0.5) short-circuits to a pure exponent
    flip, so a sum that is exactly 1 reciprocates to exactly 1.
    """
    m, e = math.frexp(s)
    if m == 0.5:
        return math.ldexp(1.0, 1 - e)
    y = _RECIP_A - _RECIP_B * m
    y = y * (2.0 - m * y)
    return math.ldexp(y, -e)


def hw_softmax(row: np.ndarray) -> np.ndarray:
    """Softmax of one score row as the hardware unit computes it."""
    row = np.asarray(row, dtype=np.float64)
    e = _approx_exp_nonpos(row - row.max())
    total = 0.0
    for v in e.tolist():  # running accumulator, summed in arrival order
        total += v
    return e * _approx_recip(total)


def _exact_softmax_row(row: np.ndarray) -> np.ndarray:
    m = row.max()
    e = np.array([math.exp(v - m) for v in row.tolist()])
    return e / e.sum()


# --- AV pass ---


def run_av_pass(
    p_raw: np.ndarray, v_raw: np.ndarray, schedule: TileSchedule, fmt: FxpFormat
) -> tuple[np.ndarray, PassCounters]:
    """P . V on the PE array: the four int/frac quadrants run on dedicated
    PE pairs and the adder folds them, so the result matches a direct
    fixed-point matmul of the unsplit operands."""
    f = fmt.frac_bits
    ip, fp = split_array(p_raw, fmt)
    iv, fv = split_array(v_raw, fmt)
    l, d_h = schedule.n, schedule.m
    acc_ii = np.zeros((l, d_h), dtype=np.int64)
    acc_if = np.zeros((l, d_h), dtype=np.int64)
    acc_fi = np.zeros((l, d_h), dtype=np.int64)
    acc_ff = np.zeros((l, d_h), dtype=np.int64)
    counters = PassCounters()
    step_macs = TILE_N * TILE_M * TILE_K
    for (i, j, k) in schedule.steps:
        rs, cs, ks = slice(i, i + TILE_N), slice(j, j + TILE_M), slice(k, k + TILE_K)
        acc_ii[rs, cs] += ip[rs, ks] @ iv[ks, cs]
        acc_if[rs, cs] += ip[rs, ks] @ fv[ks, cs]
        acc_fi[rs, cs] += fp[rs, ks] @ iv[ks, cs]
        acc_ff[rs, cs] += fp[rs, ks] @ fv[ks, cs]
        counters.tile_steps += 1
        counters.macs_av_ii += step_macs
        counters.macs_av_if += step_macs
        counters.macs_av_fi += step_macs
        counters.macs_av_ff += step_macs
    acc = (acc_ii << (2 * f)) + ((acc_if + acc_fi) << f) + acc_ff
    out = saturate_array(rne_shift_array(acc, f), fmt)
    return out, counters


# --- layer simulation ---

HEAD_CSV_COLUMNS = [
    "head",
    "kept",
    "tile_steps",
    "macs_int",
    "macs_frac1",
    "macs_frac2",
    "macs_av_ii",
    "macs_av_if",
    "macs_av_fi",
    "macs_av_ff",
    "se_end_r",
    "se_end_h",
    "k_fetch_skipped_elements",
    "dram_fetched_bytes",
    "dram_skipped_bytes",
    "softmax_max_abs_err",
]


@dataclass
class HeadReport:
    head: int
    kept: bool
    tile_steps: int = 0
    macs_int: int = 0
    macs_frac1: int = 0
    macs_frac2: int = 0
    macs_av_ii: int = 0
    macs_av_if: int = 0
    macs_av_fi: int = 0
    macs_av_ff: int = 0
    se_end_r: int = 0
    se_end_h: int = 0
    k_fetch_skipped_elements: int = 0
    dram_fetched_bytes: int = 0
    dram_skipped_bytes: int = 0
    softmax_max_abs_err: float = 0.0

    def csv_row(self) -> list:
        return [getattr(self, c) if c != "kept" else int(self.kept) for c in HEAD_CSV_COLUMNS]


@dataclass
class SimReport:
    """Cost-model output: per-head rows plus layer totals.

    DRAM traffic is element-granular: every counted fetch or skip of one
    operand component is one element of total_bits/8 bytes.  fetched +
    skipped always equals the dense no-pruning demand.
    """

    heads: list[HeadReport] = field(default_factory=list)

    @property
    def heads_skipped(self) -> int:
        return sum(1 for h in self.heads if not h.kept)

    def total(self, name: str):
        return sum(getattr(h, name) for h in self.heads)

    @property
    def softmax_max_abs_err(self) -> float:
        return max((h.softmax_max_abs_err for h in self.heads), default=0.0)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(HEAD_CSV_COLUMNS) + "\n")
            for h in self.heads:
                fh.write(",".join(str(v) for v in h.csv_row()) + "\n")
            totals = ["total", sum(1 for h in self.heads if h.kept)]
            totals += [self.total(c) for c in HEAD_CSV_COLUMNS[2:-1]]
            totals.append(self.softmax_max_abs_err)
            fh.write(",".join(str(v) for v in totals) + "\n")


def _masked_hw_softmax(
    score_raw: np.ndarray, mask: BlockMask, fmt: FxpFormat, pruned_logit: str
) -> tuple[np.ndarray, float]:
    """Quantized probabilities from the softmax unit plus observed max error."""
    l = score_raw.shape[0]
    keep = mask.expand()
    scores = score_raw.astype(np.float64) / fmt.scale
    probs = np.zeros((l, l))
    worst = 0.0
    for i in range(l):
        if pruned_logit == PRUNED_ZERO:
            cols = np.arange(l)
        else:
            cols = np.flatnonzero(keep[i])
            if cols.size == 0:
                continue
        row = scores[i, cols]
        approx = hw_softmax(row)
        worst = max(worst, float(np.max(np.abs(approx - _exact_softmax_row(row)))))
        probs[i, cols] = approx
    p_raw = np.rint(probs * fmt.scale).astype(np.int64)
    return p_raw, worst


def simulate_layer(
    Q: Matrix,
    K: Matrix,
    V: Matrix,
    params: PruneParams,
    cfg: AttentionConfig,
    pruned_logit: str = PRUNED_EXCLUDE,
) -> tuple[Matrix, SimReport, list[BlockMask]]:
    """Run every head through the co-processor dataflow sequentially.

    Returns the layer output, the cost report, and the per-head masks the
    sparsity engine produced.
    """
    if pruned_logit not in PRUNED_LOGIT_MODES:
        raise ValueError(f"pruned_logit must be one of {PRUNED_LOGIT_MODES}")
    cfg.require_blockable()
    l, d_h = cfg.seq_len, cfg.head_dim
    if l % TILE_M or d_h % TILE_M:
        raise ValueError("non-tileable dims: seq_len and head_dim must be multiples of 8")
    for name, m in (("Q", Q), ("K", K), ("V", V)):
        if (m.rows, m.cols) != (cfg.seq_len, cfg.model_dim):
            raise ValueError(f"{name} is {m.rows}x{m.cols}, config wants {cfg.seq_len}x{cfg.model_dim}")
    fmt = cfg.fmt
    n_blocks = (l // BLOCK) ** 2
    elem_bytes_num = fmt.total_bits  # bytes = elements * total_bits / 8
    score_schedule = schedule_tiles(l, d_h, l)
    av_schedule = schedule_tiles(l, l, d_h)
    out = np.zeros((l, cfg.model_dim), dtype=np.int64)
    report = SimReport()
    masks: list[BlockMask] = []

    def to_bytes(elements: int) -> int:
        return elements * elem_bytes_num // 8

    for h in range(cfg.num_heads):
        iq, fq = split_array(Q.head(h, d_h), fmt)
        ik, fk = split_array(K.head(h, d_h), fmt)
        v_raw = V.head(h, d_h)

        int_scores, events, int_counters = run_integer_pass(iq, ik, score_schedule)
        engine = SparsityEngine(l // BLOCK, params)
        for ev in events:
            engine.step(ev)
        head_mask = engine.mask()
        masks.append(head_mask)
        kept = bool(engine.head_kept)

        hr = HeadReport(head=h, kept=kept)
        hr.tile_steps = int_counters.tile_steps
        hr.macs_int = int_counters.macs_int
        hr.se_end_r = engine.end_r_count
        hr.se_end_h = engine.end_h_count

        dense_frac_k = 2 * BLOCK * d_h * n_blocks
        fetched = 2 * l * d_h  # IQ + IK for the integer pass
        skipped = 0
        if kept:
            masked_int = np.where(head_mask.expand(), int_scores, 0)
            score_acc, frac_counters = run_frac_pass(
                iq, fq, ik, fk, masked_int, head_mask, score_schedule, fmt.frac_bits
            )
            hr.tile_steps += frac_counters.tile_steps
            hr.macs_frac1 = frac_counters.macs_frac1
            hr.macs_frac2 = frac_counters.macs_frac2
            hr.k_fetch_skipped_elements = frac_counters.k_elements_fetch_skipped
            fetched += 2 * l * d_h  # IQ + FQ fetched again for the fraction passes
            fetched += frac_counters.k_elements_fetched
            skipped += frac_counters.k_elements_fetch_skipped

            score_raw = scale_by_rsqrt(score_acc, d_h, fmt)
            p_raw, hr.softmax_max_abs_err = _masked_hw_softmax(score_raw, head_mask, fmt, pruned_logit)

            head_out, av_counters = run_av_pass(p_raw, v_raw, av_schedule, fmt)
            hr.tile_steps += av_counters.tile_steps
            hr.macs_av_ii = av_counters.macs_av_ii
            hr.macs_av_if = av_counters.macs_av_if
            hr.macs_av_fi = av_counters.macs_av_fi
            hr.macs_av_ff = av_counters.macs_av_ff
            fetched += 2 * l * d_h  # IV + FV
            out[:, h * d_h : (h + 1) * d_h] = head_out
        else:
            hr.k_fetch_skipped_elements = dense_frac_k
            skipped += 2 * l * d_h  # IQ + FQ never refetched
            skipped += dense_frac_k
            skipped += 2 * l * d_h  # IV + FV never fetched

        fetched += l * d_h  # results always written back, zeros included
        hr.dram_fetched_bytes = to_bytes(fetched)
        hr.dram_skipped_bytes = to_bytes(skipped)
        report.heads.append(hr)

    return Matrix(out, fmt), report, masks

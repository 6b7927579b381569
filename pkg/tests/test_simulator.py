import numpy as np
import pytest

from hdp.fxp import FxpFormat, matmul_fxp, split_array
from hdp.mask import BlockMask
from hdp.pruning import PruneParams, build_mask, block_importance, hdp_attention, integer_score
from hdp.reference import AttentionConfig, softmax_rows
from hdp.simulator import (
    EndHead,
    EndRow,
    Importance,
    ProtocolError,
    SparsityEngine,
    hw_softmax,
    run_av_pass,
    run_frac_pass,
    run_integer_pass,
    schedule_tiles,
    simulate_layer,
    HEAD_CSV_COLUMNS,
)
from hdp.tensorio import Gaussian, Matrix, gen_synthetic

Q8_8 = FxpFormat(16, 8)


def _head_raws(seed, l, d_h, span=32768):
    rng = np.random.default_rng(seed)
    return (
        rng.integers(-span, span, (l, d_h)),
        rng.integers(-span, span, (l, d_h)),
        rng.integers(-span, span, (l, d_h)),
    )


class TestSchedule:
    def test_single_tile(self):
        s = schedule_tiles(4, 4, 8)
        assert s.steps == ((0, 0, 0),)

    def test_eight_step_order(self):
        s = schedule_tiles(8, 8, 16)
        assert s.steps == (
            (0, 0, 0),
            (0, 0, 4),
            (0, 8, 0),
            (0, 8, 4),
            (4, 0, 0),
            (4, 0, 4),
            (4, 8, 0),
            (4, 8, 4),
        )

    def test_output_tile_visits_consecutive_k(self):
        # recount against the plain loop-nest oracle
        s = schedule_tiles(16, 8, 24)
        oracle = [
            (i, j, k)
            for i in range(0, 16, 4)
            for j in range(0, 24, 8)
            for k in range(0, 8, 4)
        ]
        assert list(s.steps) == oracle
        per_tile = {}
        for idx, (i, j, k) in enumerate(s.steps):
            per_tile.setdefault((i, j), []).append(idx)
        for positions in per_tile.values():
            assert len(positions) == s.steps_per_tile() == 2
            assert positions == list(range(positions[0], positions[0] + 2))

    @pytest.mark.parametrize("dims", [(6, 4, 8), (4, 5, 8), (4, 4, 12)])
    def test_non_tileable_rejected(self, dims):
        with pytest.raises(ValueError, match="non-tileable"):
            schedule_tiles(*dims)


class TestIntegerPass:
    def test_zero_inputs_zero_stream(self):
        sched = schedule_tiles(8, 4, 8)
        out, events, counters = run_integer_pass(
            np.zeros((8, 4), dtype=np.int64), np.zeros((8, 4), dtype=np.int64), sched
        )
        assert not out.any()
        thetas = [e.theta for e in events if isinstance(e, Importance)]
        assert thetas and not any(thetas)

    def test_matches_direct_integer_score(self):
        iq, ik, _ = _head_raws(1, 8, 4, span=128)
        sched = schedule_tiles(8, 4, 8)
        out, _, counters = run_integer_pass(iq, ik, sched)
        assert np.array_equal(out, integer_score(iq, ik))
        assert counters.macs_int == 8 * 8 * 4

    def test_event_stream_structure(self):
        iq, ik, _ = _head_raws(2, 8, 4, span=64)
        sched = schedule_tiles(8, 4, 8)
        out, events, _ = run_integer_pass(iq, ik, sched)
        assert isinstance(events[-1], EndHead)
        imp = [e for e in events if isinstance(e, Importance)]
        assert len(imp) == 16  # (l/2)^2 blocks
        # every block importance matches the block sums of the result
        grid = block_importance(out).values
        for e in imp:
            assert e.theta == grid[e.row, e.col]
        # END_R arrives after all importances of its row
        seen = set()
        rows_ended = set()
        for e in events:
            if isinstance(e, Importance):
                assert e.row not in rows_ended
                seen.add((e.row, e.col))
            elif isinstance(e, EndRow):
                assert all((e.row, c) in seen for c in range(4))
                rows_ended.add(e.row)
        assert rows_ended == {0, 1, 2, 3}


class TestSparsityEngine:
    def _feed_row(self, engine, thetas, row=0):
        for col, theta in enumerate(thetas):
            engine.step(Importance(row, col, theta))

    def test_hand_threshold_row(self):
        engine = SparsityEngine(4, PruneParams(0.5, 0.0))
        self._feed_row(engine, [2, 4, 6, 8])
        engine.step(EndRow(0))
        assert engine.mask_row(0) == [False, False, False, True]

    def test_head_prune_on_zero_total(self):
        engine = SparsityEngine(1, PruneParams(0.0, 1.0))
        self._feed_row(engine, [0, 0])
        engine.step(EndRow(0))
        engine.step(EndHead())
        assert engine.head_kept is False

    def test_matches_core_mask_on_random_stream(self):
        iq, ik, _ = _head_raws(3, 16, 8, span=128)
        sched = schedule_tiles(16, 8, 16)
        out, events, _ = run_integer_pass(iq, ik, sched)
        for ratio in (-0.7, -0.2, 0.0, 0.4, 0.8):
            engine = SparsityEngine(8, PruneParams(ratio, 0.0))
            for e in events:
                engine.step(e)
            expect = build_mask(block_importance(out), ratio)
            assert engine.mask() == expect

    def test_end_r_before_importance_is_error(self):
        engine = SparsityEngine(2, PruneParams(0.0, 0.0))
        with pytest.raises(ProtocolError):
            engine.step(EndRow(0))

    def test_end_h_before_all_rows_is_error(self):
        engine = SparsityEngine(2, PruneParams(0.0, 0.0))
        self._feed_row(engine, [1, 2], row=0)
        engine.step(EndRow(0))
        with pytest.raises(ProtocolError):
            engine.step(EndHead())


class TestFracPass:
    def _setup(self, seed, l, d_h):
        q, k, _ = _head_raws(seed, l, d_h)
        iq, fq = split_array(q, Q8_8)
        ik, fk = split_array(k, Q8_8)
        ints = integer_score(iq, ik)
        sched = schedule_tiles(l, d_h, l)
        return iq, fq, ik, fk, ints, sched

    def test_all_pruned_mask(self):
        iq, fq, ik, fk, ints, sched = self._setup(4, 8, 4)
        mask = BlockMask(np.zeros((4, 4), dtype=bool))
        acc, counters = run_frac_pass(iq, fq, ik, fk, np.zeros_like(ints), mask, sched, 8)
        assert not acc.any()
        assert counters.macs_frac1 == counters.macs_frac2 == 0
        assert counters.k_elements_fetched == 0
        assert counters.k_elements_fetch_skipped == 4 * 4 * 16  # 4*d_h per block
        assert counters.tile_steps == 0

    def test_all_kept_dense_counts(self):
        iq, fq, ik, fk, ints, sched = self._setup(5, 8, 4)
        mask = BlockMask.all_ones(4)
        masked = ints
        acc, counters = run_frac_pass(iq, fq, ik, fk, masked, mask, sched, 8)
        l, d_h = 8, 4
        assert counters.macs_frac1 + counters.macs_frac2 == 2 * l * l * d_h
        assert counters.k_elements_fetch_skipped == 0
        # adder result equals the vectorized approximation
        from hdp.pruning import approximate_scores

        assert np.array_equal(acc, approximate_scores(iq, fq, ik, fk, masked, mask, 8))

    def test_random_mask_skip_count(self):
        iq, fq, ik, fk, ints, sched = self._setup(6, 16, 8)
        rng = np.random.default_rng(9)
        bits = rng.random((8, 8)) < 0.6
        mask = BlockMask(bits)
        masked = np.where(mask.expand(), ints, 0)
        acc, counters = run_frac_pass(iq, fq, ik, fk, masked, mask, sched, 8)
        assert counters.k_elements_fetch_skipped == 4 * 8 * mask.pruned()
        assert counters.macs_frac1 == 4 * 8 * mask.kept()
        from hdp.pruning import approximate_scores

        assert np.array_equal(acc, approximate_scores(iq, fq, ik, fk, masked, mask, 8))


class TestHwSoftmax:
    def test_single_element_is_exactly_one(self):
        assert hw_softmax(np.array([3.7])).tolist() == [1.0]
        assert hw_softmax(np.array([-120.0])).tolist() == [1.0]

    def test_uniform_row_equal(self):
        p = hw_softmax(np.full(16, 2.5))
        assert np.all(p == p[0])
        assert abs(p.sum() - 1.0) <= 2**-6

    def test_error_bound_and_sums(self):
        rng = np.random.default_rng(10)
        worst = 0.0
        worst_sum = 0.0
        for _ in range(1000):
            width = int(rng.integers(2, 64))
            row = np.round(rng.normal(0, 6, width) * 256) / 256  # fxp-grid scores
            approx = hw_softmax(row)
            exact = softmax_rows(row[None, :])[0]
            worst = max(worst, np.abs(approx - exact).max())
            worst_sum = max(worst_sum, abs(approx.sum() - 1.0))
        assert worst <= 2**-7
        assert worst_sum <= 2**-6

    def test_monotone_within_row(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            row = np.round(rng.normal(0, 8, 32) * 256) / 256
            p = hw_softmax(row)
            order = np.argsort(row, kind="stable")
            assert np.all(np.diff(p[order]) >= 0)


class TestAvPass:
    def test_integer_operands_zero_fraction_quadrants(self):
        rng = np.random.default_rng(12)
        p = rng.integers(0, 2, (8, 8)) * 256  # integer-valued probabilities
        v = rng.integers(-64, 64, (8, 8)) * 256
        ip, fp = split_array(p, Q8_8)
        iv, fv = split_array(v, Q8_8)
        assert not fp.any() and not fv.any()
        sched = schedule_tiles(8, 8, 8)
        out, _ = run_av_pass(p, v, sched, Q8_8)
        assert np.array_equal(out, matmul_fxp(p, v, Q8_8))

    def test_one_hot_probabilities_permute_values(self):
        perm = [2, 0, 3, 1, 7, 5, 4, 6]
        p = np.zeros((8, 8), dtype=np.int64)
        for i, j in enumerate(perm):
            p[i, j] = 256
        v = _head_raws(13, 8, 8)[2]
        sched = schedule_tiles(8, 8, 8)
        out, _ = run_av_pass(p, v, sched, Q8_8)
        assert np.array_equal(out, v[perm])

    def test_matches_widened_matmul_oracle(self):
        p_real = softmax_rows(np.random.default_rng(14).normal(0, 2, (8, 8)))
        p = np.rint(p_real * 256).astype(np.int64)
        v = _head_raws(15, 8, 8)[2]
        sched = schedule_tiles(8, 8, 8)
        out, counters = run_av_pass(p, v, sched, Q8_8)
        assert np.array_equal(out, matmul_fxp(p, v, Q8_8))
        assert counters.macs_av_ii == 8 * 8 * 8
        assert counters.macs_av_ff == 8 * 8 * 8


class TestSimulateLayer:
    def _inputs(self, seed, l, d, heads, sigma=3.0):
        cfg = AttentionConfig(l, d, heads, Q8_8)
        Q = gen_synthetic(l, d, Gaussian(0, sigma), seed, Q8_8)
        K = gen_synthetic(l, d, Gaussian(0, sigma), seed + 1, Q8_8)
        V = gen_synthetic(l, d, Gaussian(0, sigma), seed + 2, Q8_8)
        return cfg, Q, K, V

    def test_all_heads_pruned_write_only(self):
        cfg, Q, K, V = self._inputs(20, 8, 16, 2)
        params = PruneParams(0.0, 2.0**62)
        out, report, masks = simulate_layer(Q, K, V, params, cfg)
        assert not out.raw.any()
        assert report.heads_skipped == 2
        l, d_h = 8, 8
        for hr in report.heads:
            assert hr.macs_frac1 == hr.macs_av_ii == 0
            assert hr.dram_fetched_bytes == (2 * l * d_h + l * d_h) * 2  # int pass + result write
        total = (7 * l * d_h + d_h * l * l) * 2
        assert all(hr.dram_fetched_bytes + hr.dram_skipped_bytes == total for hr in report.heads)

    def test_dense_counters_closed_form(self):
        # constant rows give uniform block importances: nothing prunes
        l, d_h = 8, 8
        cfg = AttentionConfig(l, d_h, 1, Q8_8)
        row = np.arange(d_h) * 256 - 512
        Q = Matrix(np.tile(row, (l, 1)), Q8_8)
        K = Matrix(np.tile(row[::-1].copy(), (l, 1)), Q8_8)
        V = Matrix(np.tile(row, (l, 1)), Q8_8)
        out, report, masks = simulate_layer(Q, K, V, PruneParams(0.9, 0.0), cfg)
        assert masks[0].kept() == 16
        hr = report.heads[0]
        assert hr.macs_int == l * l * d_h
        assert hr.macs_frac1 == hr.macs_frac2 == l * l * d_h
        assert hr.macs_av_ii == hr.macs_av_if == hr.macs_av_fi == hr.macs_av_ff == l * l * d_h
        assert hr.se_end_r == l // 2 and hr.se_end_h == 1
        int_steps = (l // 4) * (l // 8) * (d_h // 4)
        frac_steps = (l // 4) * (l // 8) * (d_h // 4)
        av_steps = (l // 4) * (d_h // 8) * (l // 4)
        assert hr.tile_steps == int_steps + frac_steps + av_steps
        assert hr.k_fetch_skipped_elements == 0

    def test_matches_core_within_softmax_bound(self):
        for seed in (30, 31, 32):
            cfg, Q, K, V = self._inputs(seed, 16, 16, 2)
            params = PruneParams(0.3, 0.0)
            core_out, core_masks, _ = hdp_attention(Q, K, V, params, cfg)
            sim_out, report, sim_masks = simulate_layer(Q, K, V, params, cfg)
            assert all(a == b for a, b in zip(core_masks, sim_masks))
            verr = np.abs(V.to_reals()).sum(axis=0).max()
            bound = (report.softmax_max_abs_err + 1 / 256) * verr + 1 / 256
            diff = np.abs(core_out.to_reals() - sim_out.to_reals()).max()
            assert diff <= bound

    def test_conservation_and_mask_equivalence_random(self):
        rng = np.random.default_rng(40)
        for trial in range(20):
            l = int(rng.choice([8, 16]))
            d_h = int(rng.choice([8, 16]))
            heads = int(rng.choice([1, 2]))
            ratio = float(rng.uniform(-0.9, 0.9))
            tau = float(rng.choice([0.0, 64.0 * d_h, 2.0**62]))
            cfg, Q, K, V = self._inputs(100 + trial, l, d_h * heads, heads)
            params = PruneParams(ratio, tau)
            core_out, core_masks, stats = hdp_attention(Q, K, V, params, cfg)
            sim_out, report, sim_masks = simulate_layer(Q, K, V, params, cfg)
            assert all(a == b for a, b in zip(core_masks, sim_masks))
            dense = (7 * l * d_h + d_h * l * l) * 2
            for hr in report.heads:
                assert hr.dram_fetched_bytes + hr.dram_skipped_bytes == dense
            assert report.total("k_fetch_skipped_elements") == stats.k_elements_fetch_skipped
            assert report.total("macs_frac1") + report.total("macs_frac2") == stats.macs_frac_executed

    def test_work_monotone_in_params(self):
        cfg, Q, K, V = self._inputs(50, 16, 8, 1)
        monitored = ["tile_steps", "macs_frac1", "macs_frac2", "macs_av_ii", "dram_fetched_bytes"]
        prev = None
        for ratio in (-0.8, -0.4, 0.0, 0.4, 0.8):
            _, report, _ = simulate_layer(Q, K, V, PruneParams(ratio, 0.0), cfg)
            cur = [report.total(c) for c in monitored]
            if prev is not None:
                assert all(c <= p for c, p in zip(cur, prev))
            prev = cur
        _, rep_tau, _ = simulate_layer(Q, K, V, PruneParams(0.8, 2.0**62), cfg)
        assert all(rep_tau.total(c) <= p for c, p in zip(monitored, prev))

    def test_non_tileable_rejected(self):
        cfg, Q, K, V = self._inputs(60, 4, 4, 1)
        with pytest.raises(ValueError, match="non-tileable"):
            simulate_layer(Q, K, V, PruneParams(), cfg)

    def test_csv_report(self, tmp_path):
        cfg, Q, K, V = self._inputs(61, 8, 8, 1)
        _, report, _ = simulate_layer(Q, K, V, PruneParams(0.2, 0.0), cfg)
        report.to_csv(tmp_path / "sim.csv")
        lines = (tmp_path / "sim.csv").read_text().splitlines()
        assert lines[0] == ",".join(HEAD_CSV_COLUMNS)
        assert len(lines) == 3  # header + 1 head + total
        assert lines[-1].startswith("total,")

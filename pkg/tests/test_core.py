"""Attention core: blockwise attention, merge rule, dense oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ringsim
from ringsim import (DimensionError, InputError, MaskSpec, Partial,
                     block_attention, dense_attention_oracle, merge_partial,
                     rng)
from conftest import naive_attention, random_partial


class TestBlockAttention:
    def test_single_token_identity(self):
        one = np.ones((1, 1, 1))
        p = block_attention(one, one, one)
        # score = 1*1/sqrt(1) = 1; a single key gets softmax weight 1
        assert p.out[0, 0, 0] == 1.0
        assert p.lse[0, 0] == 1.0

    def test_two_identical_keys_average_values(self):
        q = np.array([[[1.0, 0.5]]])
        key = np.array([0.25, -0.75])
        k = np.stack([key, key])[:, None, :]
        v1, v2 = np.array([2.0, -4.0]), np.array([6.0, 8.0])
        v = np.stack([v1, v2])[:, None, :]
        p = block_attention(q, k, v)
        score = (q[0, 0] @ key) / math.sqrt(2)
        np.testing.assert_allclose(p.out[0, 0], (v1 + v2) / 2, rtol=1e-15)
        np.testing.assert_allclose(p.lse[0, 0], score + math.log(2), rtol=1e-15)

    def test_matches_naive_oracle_seed42(self):
        q, k, v = rng.attention_inputs(42, 4, 2, 3)
        ref_out, ref_lse = naive_attention(q, k, v)
        p = block_attention(q, k, v)
        assert np.abs(p.out - ref_out).max() <= 1e-12
        assert np.abs(p.lse - ref_lse).max() <= 1e-12
        # spot values frozen from the extended-precision oracle
        assert ref_lse[0, 0] == pytest.approx(1.144157354277393, abs=1e-13)
        assert ref_out[0, 0, 0] == pytest.approx(-0.17376816644158208, abs=1e-13)
        assert ref_out[3, 1, 2] == pytest.approx(-0.08708629600115192, abs=1e-13)

    def test_fully_masked_returns_identity_rows(self):
        q, k, v = rng.attention_inputs(3, 4, 2, 5)
        p = block_attention(q, k, v, MaskSpec.fully_masked())
        assert np.all(np.isneginf(p.lse))
        assert np.all(p.out == 0.0)

    def test_causal_offsets_select_key_prefix(self):
        q, k, v = rng.attention_inputs(11, 6, 2, 4)
        # q rows are global tokens 8..13, keys are global tokens 4..9
        p = block_attention(q, k, v, MaskSpec.causal(q_offset=8, k_offset=4))
        for i in range(6):
            visible = min(8 + i - 4 + 1, 6)
            ref = block_attention(q[i:i + 1], k[:visible], v[:visible])
            np.testing.assert_allclose(p.out[i], ref.out[0], rtol=1e-13, atol=1e-15)
            np.testing.assert_allclose(p.lse[:, i], ref.lse[:, 0], rtol=1e-13)

    def test_causal_offsets_can_mask_everything(self):
        q, k, v = rng.attention_inputs(5, 2, 1, 3)
        p = block_attention(q, k, v, MaskSpec.causal(q_offset=0, k_offset=10))
        assert np.all(np.isneginf(p.lse))
        assert np.all(p.out == 0.0)

    def test_output_rows_stay_in_value_hull(self):
        q, k, v = rng.attention_inputs(23, 8, 3, 4, low=-3.0, high=3.0)
        p = block_attention(q, k, v)
        lo, hi = v.min(axis=0), v.max(axis=0)
        assert np.all(p.out >= lo[None] - 1e-12)
        assert np.all(p.out <= hi[None] + 1e-12)

    def test_large_scores_stay_finite(self):
        # |score| up to 700 before the row-max subtraction
        q = np.full((2, 1, 1), 700.0)
        k = np.array([[[1.0]], [[-1.0]]])
        v = np.array([[[3.0]], [[-5.0]]])
        p = block_attention(q, k, v)
        assert np.isfinite(p.out).all() and np.isfinite(p.lse).all()
        ref_out, ref_lse = naive_attention(q, k, v)
        np.testing.assert_allclose(p.out, ref_out, rtol=1e-12)
        np.testing.assert_allclose(p.lse, ref_lse, rtol=1e-12)

    def test_shape_mismatch_raises(self):
        q, k, v = rng.attention_inputs(1, 4, 2, 3)
        with pytest.raises(DimensionError):
            block_attention(q, k[:, :1], v)
        with pytest.raises(DimensionError):
            block_attention(q, k[:3], v)
        with pytest.raises(DimensionError):
            block_attention(q[:, :, :2], k, v)

    def test_non_finite_input_raises(self):
        q, k, v = rng.attention_inputs(1, 4, 2, 3)
        bad = q.copy()
        bad[0, 0, 0] = np.nan
        with pytest.raises(InputError):
            block_attention(bad, k, v)
        bad[0, 0, 0] = np.inf
        with pytest.raises(InputError):
            block_attention(bad, k, v)


class TestMergePartial:
    def test_empty_accumulator_is_exact_identity(self):
        blk = random_partial(5, 6, 2, 3)
        empty = Partial.empty(6, 2, 3)
        merged = merge_partial(empty, blk)
        assert np.array_equal(merged.out, blk.out)
        assert np.array_equal(merged.lse, blk.lse)
        # and the mirrored direction
        merged = merge_partial(blk, empty)
        assert np.array_equal(merged.out, blk.out)
        assert np.array_equal(merged.lse, blk.lse)

    def test_equal_lse_averages_exactly(self):
        # dyadic values so the convex combination is exact in binary floating point
        a = Partial(np.array([[[1.0, -2.25]]]), np.zeros((1, 1)))
        b = Partial(np.array([[[3.0, 0.75]]]), np.zeros((1, 1)))
        merged = merge_partial(a, b)
        assert np.array_equal(merged.out, np.array([[[2.0, -0.75]]]))
        assert merged.lse[0, 0] == math.log(2)

    def test_two_empty_rows_stay_empty(self):
        empty = Partial.empty(2, 1, 2)
        merged = merge_partial(empty, empty)
        assert np.all(np.isneginf(merged.lse))
        assert np.all(merged.out == 0.0)

    def test_split_blocks_match_oracle(self):
        q, k, v = rng.attention_inputs(13, 8, 2, 4)
        whole = dense_attention_oracle(q, k, v)
        first = block_attention(q, k[:4], v[:4])
        second = block_attention(q, k[4:], v[4:])
        merged = merge_partial(first, second)
        assert ringsim.max_relative_error(merged, whole) <= 1e-12

    def test_lse_monotonicity(self):
        a = random_partial(31, 5, 2, 3, empty_rows=True)
        b = random_partial(37, 5, 2, 3, empty_rows=True)
        merged = merge_partial(a, b)
        assert np.all(merged.lse >= np.maximum(a.lse, b.lse) - 1e-12)

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError):
            merge_partial(Partial.empty(2, 1, 3), Partial.empty(3, 1, 3))

    @settings(max_examples=60, deadline=None, derandomize=True)
    @given(seed=st.integers(0, 2 ** 32), n=st.integers(2, 8),
           shuffle=st.randoms(use_true_random=False))
    def test_merge_order_independence(self, seed, n, shuffle):
        parts = [random_partial(seed + 10 * i, 3, 2, 2, empty_rows=True)
                 for i in range(n)]
        reference = parts[0]
        for p in parts[1:]:
            reference = merge_partial(reference, p)

        order = list(range(n))
        shuffle.shuffle(order)
        # random association: repeatedly merge two adjacent entries
        pool = [parts[i] for i in order]
        while len(pool) > 1:
            at = shuffle.randrange(len(pool) - 1)
            pool[at:at + 2] = [merge_partial(pool[at], pool[at + 1])]
        result = pool[0]
        assert np.abs(result.out - reference.out).max() <= 1e-10
        both_inf = np.isneginf(result.lse) & np.isneginf(reference.lse)
        got = np.where(both_inf, 0.0, result.lse)
        want = np.where(both_inf, 0.0, reference.lse)
        assert np.abs(got - want).max() <= 1e-10


class TestDenseOracle:
    def test_causal_single_token(self):
        q, k, v = rng.attention_inputs(3, 1, 2, 4)
        p = dense_attention_oracle(q, k, v, causal=True)
        np.testing.assert_allclose(p.out[0], v[0], rtol=1e-15)
        scores = (q[0] * k[0]).sum(axis=1) / math.sqrt(4)
        np.testing.assert_allclose(p.lse[:, 0], scores, rtol=1e-15)

    def test_non_causal_equals_block_attention_exactly(self):
        q, k, v = rng.attention_inputs(17, 8, 2, 4)
        oracle = dense_attention_oracle(q, k, v, causal=False)
        block = block_attention(q, k, v, MaskSpec.none())
        assert np.array_equal(oracle.out, block.out)
        assert np.array_equal(oracle.lse, block.lse)

    def test_causal_matches_naive_oracle(self):
        q, k, v = rng.attention_inputs(42, 4, 2, 3)
        ref_out, ref_lse = naive_attention(q, k, v, causal=True)
        p = dense_attention_oracle(q, k, v, causal=True)
        assert np.abs(p.out - ref_out).max() <= 1e-12
        assert np.abs(p.lse - ref_lse).max() <= 1e-12
        assert ref_lse[0, 0] == pytest.approx(-0.18658740071149307, abs=1e-13)
        assert ref_out[2, 1, 1] == pytest.approx(-0.11089228754240948, abs=1e-13)

    @pytest.mark.parametrize("bounds", [(0, 3, 6), (0, 2, 4, 6),
                                        (0, 1, 2, 3, 4, 5, 6), (0, 5, 6)])
    def test_causal_equals_merged_key_chunks(self, bounds):
        q, k, v = rng.attention_inputs(19, 6, 2, 3)
        oracle = dense_attention_oracle(q, k, v, causal=True)
        acc = Partial.empty(6, 2, 3)
        for start, stop in zip(bounds, bounds[1:]):
            blk = block_attention(q, k[start:stop], v[start:stop],
                                  MaskSpec.causal(q_offset=0, k_offset=start))
            acc = merge_partial(acc, blk)
        assert ringsim.max_relative_error(acc, oracle) <= 1e-10

    def test_causal_needs_square_shapes(self):
        q, k, v = rng.attention_inputs(3, 4, 1, 2)
        with pytest.raises(DimensionError):
            dense_attention_oracle(q, k[:2], v[:2], causal=True)


@settings(max_examples=40, deadline=None, derandomize=True)
@given(seed=st.integers(0, 2 ** 32), n_blocks=st.integers(1, 5))
def test_blockwise_folding_matches_oracle(seed, n_blocks):
    q, k, v = rng.attention_inputs(seed, 10, 2, 3, low=-3.0, high=3.0)
    cuts = sorted({1 + (seed >> (4 * i)) % 9 for i in range(n_blocks - 1)})
    bounds = [0, *cuts, 10]
    acc = Partial.empty(10, 2, 3)
    for start, stop in zip(bounds, bounds[1:]):
        if stop > start:
            acc = merge_partial(acc, block_attention(q, k[start:stop], v[start:stop]))
    oracle = dense_attention_oracle(q, k, v)
    assert ringsim.max_relative_error(acc, oracle) <= 1e-10

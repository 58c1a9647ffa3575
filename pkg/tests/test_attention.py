"""Attention blocks against brute-force oracles and their invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import spatial_attention_direct, temporal_attention_direct, flatten_direct
from stam.attention import (
    AttentionMap,
    SpatialAttentionParams,
    TemporalAttentionHead,
    apply_spatial,
    decode_flat_index,
    flatten_sequence,
    multi_head_temporal,
    spatial_attention_map,
    temporal_attention,
    unflatten_sequence,
)
from stam.errors import ConfigError, ShapeError
from stam.gradcheck import check_gradients
from stam.tensor import Tensor, sum_all


def _params(rng, scale=0.3):
    return SpatialAttentionParams(
        conv_kernel=Tensor(rng.normal(size=(1, 2, 7, 7)) * scale, requires_grad=True),
        conv_bias=Tensor(rng.normal(size=(1,)) * scale, requires_grad=True),
    )


def _head(rng, c, scale=0.4, requires_grad=False):
    make = lambda: Tensor(rng.normal(size=(c, c)) * scale, requires_grad=requires_grad)
    return TemporalAttentionHead(w_q=make(), w_k=make(), w_v=make())


class TestSpatialAttention:
    def test_zero_params_give_half_gate(self, rng):
        f = Tensor(rng.normal(size=(3, 5, 5)))
        params = SpatialAttentionParams(
            conv_kernel=Tensor(np.zeros((1, 2, 7, 7))), conv_bias=Tensor(np.zeros(1))
        )
        gate = spatial_attention_map(f, params)
        np.testing.assert_array_equal(gate.weights.data, np.full((1, 5, 5), 0.5))

    def test_single_channel_pools_duplicate(self, rng):
        # max-pool and avg-pool of one channel are both the channel itself
        f = rng.normal(size=(1, 4, 4))
        params = _params(rng)
        gate = spatial_attention_map(Tensor(f), params)
        expected = spatial_attention_direct(f, params.conv_kernel.data, params.conv_bias.data)
        np.testing.assert_allclose(gate.weights.data, expected, atol=1e-12, rtol=0)

    def test_matches_step_by_step_oracle(self, rng):
        f = rng.normal(size=(3, 9, 9))
        params = _params(rng)
        gate = spatial_attention_map(Tensor(f), params)
        expected = spatial_attention_direct(f, params.conv_kernel.data, params.conv_bias.data)
        np.testing.assert_allclose(gate.weights.data, expected, atol=1e-12, rtol=0)

    def test_gate_strictly_inside_unit_interval(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            gate = spatial_attention_map(Tensor(rng.normal(size=(4, 6, 6))), _params(rng))
            assert gate.weights.data.min() > 0.0
            assert gate.weights.data.max() < 1.0

    def test_gradients_flow(self, rng):
        f = Tensor(rng.normal(size=(2, 8, 8)), requires_grad=True)
        params = _params(rng)
        err = check_gradients(
            lambda: sum_all(apply_spatial(f, spatial_attention_map(f, params))),
            [f, params.conv_kernel, params.conv_bias],
        )
        assert err < 1e-4


class TestApplySpatial:
    def test_constant_half_gate_halves(self, rng):
        f = Tensor(rng.normal(size=(3, 4, 4)))
        gate = AttentionMap(kind="spatial", weights=Tensor(np.full((1, 4, 4), 0.5)))
        np.testing.assert_array_equal(apply_spatial(f, gate).data, 0.5 * f.data)

    def test_all_ones_gate_is_identity(self, rng):
        f = Tensor(rng.normal(size=(3, 4, 4)))
        gate = AttentionMap(kind="spatial", weights=Tensor(np.ones((1, 4, 4))))
        np.testing.assert_array_equal(apply_spatial(f, gate).data, f.data)

    def test_hand_values(self):
        f = Tensor(np.array([[[2.0, 4.0]]]))
        gate = AttentionMap(kind="spatial", weights=Tensor(np.array([[[0.25, 0.5]]])))
        np.testing.assert_array_equal(apply_spatial(f, gate).data, [[[0.5, 2.0]]])

    def test_spatial_mismatch_rejected(self, rng):
        f = Tensor(rng.normal(size=(3, 4, 4)))
        gate = AttentionMap(kind="spatial", weights=Tensor(np.ones((1, 5, 5))))
        with pytest.raises(ShapeError):
            apply_spatial(f, gate)


class TestFlattenSequence:
    def test_degenerate_single_pixel(self):
        frame = Tensor(np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1))
        out = flatten_sequence([frame])
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])

    def test_documented_row_order(self, rng):
        frames = [rng.normal(size=(1, 2, 2)) for _ in range(2)]
        out = flatten_sequence([Tensor(f) for f in frames])
        assert out.shape == (8, 1)
        np.testing.assert_array_equal(out.data, flatten_direct(frames))

    def test_roundtrip_is_identity(self, rng):
        frames = [rng.normal(size=(3, 4, 5)) for _ in range(3)]
        fsn = flatten_sequence([Tensor(f) for f in frames])
        back = unflatten_sequence(fsn, 3, 4, 5)
        for orig, rec in zip(frames, back):
            np.testing.assert_array_equal(orig, rec)

    def test_heterogeneous_frames_rejected(self, rng):
        frames = [Tensor(rng.normal(size=(1, 2, 2))), Tensor(rng.normal(size=(1, 3, 2)))]
        with pytest.raises(ShapeError):
            flatten_sequence(frames)

    def test_decode_flat_index(self):
        assert decode_flat_index(0, 3, 4) == (0, 0, 0)
        assert decode_flat_index(11, 3, 4) == (0, 2, 3)
        assert decode_flat_index(12, 3, 4) == (1, 0, 0)


class TestTemporalAttention:
    def test_zero_projections_uniform_map_pure_residual(self, rng):
        fsn = Tensor(rng.normal(size=(4, 3)))
        zero = lambda: Tensor(np.zeros((3, 3)))
        head = TemporalAttentionHead(w_q=zero(), w_k=zero(), w_v=zero())
        out, attn = temporal_attention(fsn, head)
        np.testing.assert_array_equal(attn.weights.data, np.full((4, 4), 0.25))
        np.testing.assert_array_equal(out.data, fsn.data)

    def test_singleton_position(self, rng):
        fsn = Tensor(rng.normal(size=(1, 3)))
        head = _head(rng, 3)
        out, attn = temporal_attention(fsn, head)
        np.testing.assert_array_equal(attn.weights.data, [[1.0]])
        expected = head.w_v.data @ fsn.data[0] + fsn.data[0]
        np.testing.assert_allclose(out.data[0], expected, atol=1e-12, rtol=0)

    def test_matches_double_loop_oracle(self, rng):
        fsn = rng.normal(size=(3, 2))
        head = _head(rng, 2, scale=0.8)
        out, attn = temporal_attention(Tensor(fsn), head)
        exp_out, exp_attn = temporal_attention_direct(
            fsn, head.w_q.data, head.w_k.data, head.w_v.data
        )
        np.testing.assert_allclose(attn.weights.data, exp_attn, atol=1e-12, rtol=0)
        np.testing.assert_allclose(out.data, exp_out, atol=1e-12, rtol=0)

    def test_rows_normalize_over_sources(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            m, c = int(rng.integers(2, 10)), int(rng.integers(2, 6))
            _, attn = temporal_attention(Tensor(rng.normal(size=(m, c))), _head(rng, c))
            np.testing.assert_allclose(attn.weights.data.sum(axis=1), 1.0, atol=1e-9)
            assert attn.weights.data.min() >= 0.0 and attn.weights.data.max() <= 1.0

    def test_permutation_equivariance(self, rng):
        fsn = rng.normal(size=(6, 3))
        head = _head(rng, 3)
        perm = rng.permutation(6)
        out, _ = temporal_attention(Tensor(fsn), head)
        out_p, _ = temporal_attention(Tensor(fsn[perm]), head)
        np.testing.assert_allclose(out_p.data, out.data[perm], atol=1e-12, rtol=0)

    def test_residual_guarantee_bitwise(self, rng):
        fsn = Tensor(rng.normal(size=(5, 4)))
        head = TemporalAttentionHead(
            w_q=Tensor(rng.normal(size=(4, 4))),
            w_k=Tensor(rng.normal(size=(4, 4))),
            w_v=Tensor(np.zeros((4, 4))),
        )
        out, _ = temporal_attention(fsn, head)
        assert np.array_equal(out.data, fsn.data)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            temporal_attention(Tensor(rng.normal(size=(4, 3))), _head(rng, 5))

    def test_gradients_flow(self, rng):
        fsn = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        head = _head(rng, 3, requires_grad=True)
        err = check_gradients(
            lambda: sum_all(temporal_attention(fsn, head)[0]),
            [fsn, head.w_q, head.w_k, head.w_v],
        )
        assert err < 1e-4


class TestMultiHead:
    def test_single_head_equals_temporal_attention(self, rng):
        fsn = Tensor(rng.normal(size=(4, 3)))
        head = _head(rng, 3)
        np.testing.assert_array_equal(
            multi_head_temporal(fsn, [head]).data, temporal_attention(fsn, head)[0].data
        )

    def test_identical_heads_duplicate_blocks(self, rng):
        fsn = Tensor(rng.normal(size=(4, 3)))
        head = _head(rng, 3)
        out = multi_head_temporal(fsn, [head, head])
        np.testing.assert_array_equal(out.data[:, :3], out.data[:, 3:])

    def test_output_shape_law(self, rng):
        fsn = Tensor(rng.normal(size=(4, 2)))
        heads = [_head(rng, 2) for _ in range(3)]
        assert multi_head_temporal(fsn, heads).shape == (4, 6)

    def test_empty_heads_rejected(self, rng):
        with pytest.raises(ConfigError):
            multi_head_temporal(Tensor(rng.normal(size=(4, 2))), [])


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=2, max_value=7), st.integers(min_value=2, max_value=4), st.integers(0, 4000))
def test_temporal_normalization_property(m, c, seed):
    rng = np.random.default_rng(seed)
    _, attn = temporal_attention(Tensor(rng.normal(size=(m, c))), _head(rng, c))
    np.testing.assert_allclose(attn.weights.data.sum(axis=1), 1.0, atol=1e-9)

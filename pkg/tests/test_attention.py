"""Cross-attention layer, multi-head wiring, and fusion-block contracts."""

import numpy as np
import pytest

from ccmt.attention import (
    CrossAttentionParams,
    ResidualMode,
    ccmt_block_forward,
    init_block_params,
    multi_head_cross_attention,
    scaled_dot_attention,
)
from ccmt.errors import ShapeError
from ccmt.tensor import Tensor, matmul

from naive_oracle import naive_attention, naive_block, naive_layer_norm, naive_multi_head

rng = np.random.default_rng(7)


def make_block(d=4, d_h=4, heads=1, d_ff=8, seed=0, activation="gelu"):
    params = {}
    bp = init_block_params(params, "blk", np.random.default_rng(seed), d, d_h, heads, d_ff,
                           activation)
    return bp, params


def block_weights(params):
    return {name.replace("blk", "blk"): p.tensor.data.copy() for name, p in params.items()}


class TestScaledDotAttention:
    def test_single_kv_pair_returns_value_row(self):
        q = Tensor(rng.normal(size=(3, 4)))
        k = Tensor(rng.normal(size=(1, 4)))
        v = Tensor(rng.normal(size=(1, 5)))
        out = scaled_dot_attention(q, k, v)
        assert np.allclose(out.data, np.tile(v.data, (3, 1)))

    def test_hand_computed(self):
        out = scaled_dot_attention(
            Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]])
        )
        assert np.allclose(out.data, [[0.6698, 0.3302]], atol=1e-4)

    def test_identical_value_rows(self):
        row = rng.normal(size=5)
        v = Tensor(np.tile(row, (4, 1)))
        out = scaled_dot_attention(
            Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=(4, 2))), v
        )
        assert np.allclose(out.data, np.tile(row, (3, 1)))

    def test_matches_naive_oracle(self):
        q = rng.normal(size=(3, 4))
        k = rng.normal(size=(5, 4))
        v = rng.normal(size=(5, 4))
        out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v))
        assert np.abs(out.data - naive_attention(q, k, v)).max() < 1e-12

    def test_weights_row_stochastic(self):
        _, w = scaled_dot_attention(
            Tensor(rng.normal(size=(4, 3))),
            Tensor(rng.normal(size=(6, 3))),
            Tensor(rng.normal(size=(6, 3))),
            return_weights=True,
        )
        assert np.all(w.data >= 0)
        assert np.allclose(w.data.sum(axis=1), 1.0, atol=1e-12)

    def test_scale_factor_via_zero_padding(self):
        # Padding features with zeros keeps q.k dot products, halves the
        # 1/sqrt(d_h) scale when d_h doubles.
        q = rng.normal(size=(3, 4))
        k = rng.normal(size=(5, 4))
        qp = np.concatenate([q, np.zeros((3, 4))], axis=1)
        kp = np.concatenate([k, np.zeros((5, 4))], axis=1)
        v = rng.normal(size=(5, 2))
        _, w1 = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v), return_weights=True)
        _, w2 = scaled_dot_attention(Tensor(qp), Tensor(kp), Tensor(v), return_weights=True)
        logits = q @ k.T
        from naive_oracle import naive_softmax_rows

        assert np.allclose(w1.data, naive_softmax_rows(logits / 2.0), atol=1e-12)
        assert np.allclose(w2.data, naive_softmax_rows(logits / (8**0.5)), atol=1e-12)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            scaled_dot_attention(
                Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4)))
            )
        with pytest.raises(ShapeError):
            scaled_dot_attention(
                Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 3))), Tensor(np.zeros((5, 3)))
            )


class TestMultiHead:
    def test_single_head_reduces_to_attention_plus_projection(self):
        bp, _ = make_block(d=4, d_h=3, heads=1)
        q = rng.normal(size=(3, 4))
        kv = rng.normal(size=(5, 4))
        out = multi_head_cross_attention(Tensor(q), Tensor(kv), bp)
        plain = scaled_dot_attention(
            matmul(Tensor(q), bp.w_q[0]),
            matmul(Tensor(kv), bp.w_k[0]),
            matmul(Tensor(kv), bp.w_v[0]),
        )
        expected = matmul(plain, bp.m)
        assert np.allclose(out.data, expected.data, atol=1e-14)

    def test_matches_naive_oracle_multihead(self):
        bp, params = make_block(d=6, d_h=2, heads=3)
        q = rng.normal(size=(4, 6))
        kv = rng.normal(size=(5, 6))
        out = multi_head_cross_attention(Tensor(q), Tensor(kv), bp)
        expected = naive_multi_head(q, kv, block_weights(params), "blk")
        assert np.abs(out.data - expected).max() < 1e-12

    def test_kv_permutation_invariance(self):
        bp, _ = make_block(d=4, d_h=4, heads=2)
        q = rng.normal(size=(3, 4))
        kv = rng.normal(size=(6, 4))
        perm = np.random.default_rng(3).permutation(6)
        out1 = multi_head_cross_attention(Tensor(q), Tensor(kv), bp)
        out2 = multi_head_cross_attention(Tensor(q), Tensor(kv[perm]), bp)
        assert np.allclose(out1.data, out2.data, atol=1e-12)

    def test_query_permutation_equivariance(self):
        bp, _ = make_block(d=4, d_h=4, heads=2)
        q = rng.normal(size=(5, 4))
        kv = rng.normal(size=(6, 4))
        perm = np.random.default_rng(4).permutation(5)
        out1 = multi_head_cross_attention(Tensor(q), Tensor(kv), bp)
        out2 = multi_head_cross_attention(Tensor(q[perm]), Tensor(kv), bp)
        assert np.allclose(out1.data[perm], out2.data, atol=1e-12)

    def test_output_width_restored(self):
        bp, _ = make_block(d=5, d_h=7, heads=3)
        out = multi_head_cross_attention(
            Tensor(rng.normal(size=(2, 5))), Tensor(rng.normal(size=(4, 5))), bp
        )
        assert out.shape == (2, 5)

    def test_width_mismatch(self):
        bp, _ = make_block(d=4)
        with pytest.raises(ShapeError):
            multi_head_cross_attention(
                Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), bp
            )


class TestBlockForward:
    def test_zero_weights_kv_residual_is_double_norm(self):
        bp, params = make_block(d=4, d_h=4, heads=2, d_ff=8)
        for name, p in params.items():
            if name.endswith((".wq", ".wk", ".wv")) or name.endswith(".m") or "ff" in name:
                p.tensor.data[...] = 0.0
        kv = rng.normal(size=(3, 4))
        out = ccmt_block_forward(Tensor(rng.normal(size=(3, 4))), Tensor(kv), bp,
                                 ResidualMode.KV_RESIDUAL)
        ones, zeros = np.ones(4), np.zeros(4)
        expected = naive_layer_norm(naive_layer_norm(kv, ones, zeros), ones, zeros)
        assert np.allclose(out.data, expected, atol=1e-12)

    def test_literal_matches_oracle_hand_set(self):
        bp, params = make_block(d=2, d_h=2, heads=1, d_ff=4, seed=5)
        q = np.array([[0.3, -1.2], [2.0, 0.1]])
        kv = np.array([[1.0, 0.5], [-0.4, 0.9]])
        out = ccmt_block_forward(Tensor(q), Tensor(kv), bp, ResidualMode.LITERAL)
        expected = naive_block(q, kv, block_weights(params), "blk", "literal")
        assert np.abs(out.data - expected).max() < 1e-9

    @pytest.mark.parametrize("mode,name", [
        (ResidualMode.LITERAL, "literal"),
        (ResidualMode.KV_RESIDUAL, "kv"),
        (ResidualMode.QUERY_RESIDUAL, "query"),
    ])
    def test_all_modes_match_oracle(self, mode, name):
        bp, params = make_block(d=4, d_h=3, heads=2, d_ff=6, seed=8)
        q = rng.normal(size=(3, 4))
        kv = rng.normal(size=(3, 4))
        out = ccmt_block_forward(Tensor(q), Tensor(kv), bp, mode)
        expected = naive_block(q, kv, block_weights(params), "blk", name)
        assert np.abs(out.data - expected).max() < 1e-9

    def test_query_residual_accepts_mismatched_counts(self):
        bp, _ = make_block(d=4)
        out = ccmt_block_forward(
            Tensor(rng.normal(size=(3, 4))),
            Tensor(rng.normal(size=(5, 4))),
            bp,
            ResidualMode.QUERY_RESIDUAL,
        )
        assert out.shape == (3, 4)

    @pytest.mark.parametrize("mode", [ResidualMode.LITERAL, ResidualMode.KV_RESIDUAL])
    def test_uniformity_constraint(self, mode):
        bp, _ = make_block(d=4)
        with pytest.raises(ShapeError):
            ccmt_block_forward(
                Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 4))), bp, mode
            )

    @pytest.mark.parametrize("mode", list(ResidualMode))
    def test_output_shape_is_query_shaped(self, mode):
        bp, _ = make_block(d=4)
        k_v = 3 if mode != ResidualMode.QUERY_RESIDUAL else 6
        out = ccmt_block_forward(
            Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(k_v, 4))), bp, mode
        )
        assert out.shape == (3, 4)

    def test_deterministic(self):
        bp, _ = make_block(d=4, heads=2)
        q = Tensor(rng.normal(size=(3, 4)))
        kv = Tensor(rng.normal(size=(3, 4)))
        a = ccmt_block_forward(q, kv, bp, ResidualMode.KV_RESIDUAL)
        b = ccmt_block_forward(q, kv, bp, ResidualMode.KV_RESIDUAL)
        assert np.array_equal(a.data, b.data)

    def test_block_attention_weights_row_stochastic(self):
        bp, _ = make_block(d=4, heads=3)
        _, weights = ccmt_block_forward(
            Tensor(rng.normal(size=(3, 4))),
            Tensor(rng.normal(size=(3, 4))),
            bp,
            ResidualMode.KV_RESIDUAL,
            return_weights=True,
        )
        assert len(weights) == 3
        for w in weights:
            assert np.allclose(w.data.sum(axis=1), 1.0, atol=1e-12)

"""Cross-attention layer, multi-head extension, and the fusion block.

The attention core is U = softmax(Q Kᵀ / sqrt(d_h)) V with queries taken
from one token stream and keys/values from another. Heads project with
separate (d, d_h) matrices, concatenate, and restore width d through one
output projection. The block wraps attention with residual + norm + feed
forward in one of three residual arrangements (see ResidualMode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import (
    Tensor,
    add,
    add_row,
    add_param,
    concat_cols,
    gelu,
    layer_norm,
    matmul,
    relu,
    scale,
    softmax_rows,
    transpose,
)

_ACTIVATIONS = {"gelu": gelu, "relu": relu}


class ResidualMode(Enum):
    """How the block combines attention output with its inputs.

    LITERAL: Z = Y + Norm(Y); out = Z + FF(Norm(Z)). No input residual.
    KV_RESIDUAL: Z = Norm(Y + keys_values); out = Norm(Z + FF(Z)). Default;
        requires equal query/kv counts.
    QUERY_RESIDUAL: like KV_RESIDUAL with the queries as the residual, which
        frees the kv count to differ from the query count.
    """

    LITERAL = "literal"
    KV_RESIDUAL = "kv"
    QUERY_RESIDUAL = "query"


@dataclass
class CrossAttentionParams:
    """Learnable state of one fusion block.

    w_q/w_k/w_v hold one (d, d_h) projection per head; m restores the
    concatenated head output (heads*d_h) back to width d.
    """

    w_q: List[Tensor]
    w_k: List[Tensor]
    w_v: List[Tensor]
    m: Tensor
    norm1_gamma: Tensor
    norm1_beta: Tensor
    norm2_gamma: Tensor
    norm2_beta: Tensor
    ff_in: Tensor
    ff_in_bias: Tensor
    ff_out: Tensor
    ff_out_bias: Tensor
    activation: str = "gelu"

    @property
    def heads(self) -> int:
        return len(self.w_q)

    @property
    def d(self) -> int:
        return self.w_q[0].shape[0]

    @property
    def d_h(self) -> int:
        return self.w_q[0].shape[1]


def init_block_params(
    params: dict,
    prefix: str,
    rng: np.random.Generator,
    d: int,
    d_h: int,
    heads: int,
    d_ff: int,
    activation: str = "gelu",
    init_std: float = 0.02,
) -> CrossAttentionParams:
    """Register one block's parameters under `prefix` and return the struct.

    Projections draw from N(0, init_std); norms start at identity, biases
    at zero. Draw order is fixed, so (seed -> values) is reproducible.
    """
    if activation not in _ACTIVATIONS:
        raise ValidationError(f"unknown activation {activation!r}")

    def mat(name, shape):
        return add_param(params, f"{prefix}.{name}", rng.normal(0.0, init_std, shape)).tensor

    w_q, w_k, w_v = [], [], []
    for h in range(heads):
        w_q.append(mat(f"h{h}.wq", (d, d_h)))
        w_k.append(mat(f"h{h}.wk", (d, d_h)))
        w_v.append(mat(f"h{h}.wv", (d, d_h)))
    m = mat("m", (heads * d_h, d))
    n1g = add_param(params, f"{prefix}.norm1.gamma", np.ones(d)).tensor
    n1b = add_param(params, f"{prefix}.norm1.beta", np.zeros(d)).tensor
    n2g = add_param(params, f"{prefix}.norm2.gamma", np.ones(d)).tensor
    n2b = add_param(params, f"{prefix}.norm2.beta", np.zeros(d)).tensor
    ff_in = mat("ff_in", (d, d_ff))
    ff_in_b = add_param(params, f"{prefix}.ff_in.bias", np.zeros(d_ff)).tensor
    ff_out = mat("ff_out", (d_ff, d))
    ff_out_b = add_param(params, f"{prefix}.ff_out.bias", np.zeros(d)).tensor
    return CrossAttentionParams(
        w_q=w_q,
        w_k=w_k,
        w_v=w_v,
        m=m,
        norm1_gamma=n1g,
        norm1_beta=n1b,
        norm2_gamma=n2g,
        norm2_beta=n2b,
        ff_in=ff_in,
        ff_in_bias=ff_in_b,
        ff_out=ff_out,
        ff_out_bias=ff_out_b,
        activation=activation,
    )


def block_param_count(d: int, d_h: int, heads: int, d_ff: int) -> int:
    """Parameters in one block: QKV + output projection + 2 norms + FF."""
    return heads * 3 * d * d_h + heads * d_h * d + 4 * d + d * d_ff + d_ff + d_ff * d + d


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """softmax(q kᵀ / sqrt(d_h)) v for one head.

    q: (k_q, d_h), k: (k_v, d_h), v: (k_v, d_v). Optionally also returns the
    row-stochastic (k_q, k_v) weight matrix.
    """
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("attention inputs must be 2-D")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query/key widths differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"key/value heights differ: {k.shape} vs {v.shape}")
    d_h = q.shape[1]
    logits = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_h))
    weights = softmax_rows(logits)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def multi_head_cross_attention(
    queries: Tensor,
    keys_values: Tensor,
    params: CrossAttentionParams,
    return_weights: bool = False,
):
    """Project, attend per head, concatenate, and restore width d.

    queries: (k_q, d); keys_values: (k_v, d). Output: (k_q, d).
    """
    d = params.d
    if queries.shape[1] != d or keys_values.shape[1] != d:
        raise ShapeError(
            f"token width must be {d}: queries {queries.shape}, keys_values {keys_values.shape}"
        )
    head_outs = []
    head_weights = []
    for h in range(params.heads):
        qh = matmul(queries, params.w_q[h])
        kh = matmul(keys_values, params.w_k[h])
        vh = matmul(keys_values, params.w_v[h])
        out_h, w_h = scaled_dot_attention(qh, kh, vh, return_weights=True)
        head_outs.append(out_h)
        head_weights.append(w_h)
    merged = head_outs[0] if len(head_outs) == 1 else concat_cols(head_outs)
    projected = matmul(merged, params.m)
    if return_weights:
        return projected, head_weights
    return projected


def feed_forward(x: Tensor, params: CrossAttentionParams) -> Tensor:
    act = _ACTIVATIONS[params.activation]
    hidden = act(add_row(matmul(x, params.ff_in), params.ff_in_bias))
    return add_row(matmul(hidden, params.ff_out), params.ff_out_bias)


def ccmt_block_forward(
    queries: Tensor,
    keys_values: Tensor,
    params: CrossAttentionParams,
    mode: ResidualMode = ResidualMode.KV_RESIDUAL,
    return_weights: bool = False,
):
    """One fusion block; output is (k_q, d) in every mode.

    LITERAL and KV_RESIDUAL require the query and kv counts to match (the
    uniformity constraint); QUERY_RESIDUAL accepts any kv count.
    """
    if mode in (ResidualMode.LITERAL, ResidualMode.KV_RESIDUAL):
        if queries.shape[0] != keys_values.shape[0]:
            raise ShapeError(
                f"{mode.name} needs equal token counts, got queries {queries.shape} "
                f"vs keys_values {keys_values.shape}"
            )
    y, weights = multi_head_cross_attention(queries, keys_values, params, return_weights=True)
    if mode == ResidualMode.LITERAL:
        z = add(y, layer_norm(y, params.norm1_gamma, params.norm1_beta))
        out = add(z, feed_forward(layer_norm(z, params.norm2_gamma, params.norm2_beta), params))
    else:
        residual = keys_values if mode == ResidualMode.KV_RESIDUAL else queries
        z = layer_norm(add(y, residual), params.norm1_gamma, params.norm1_beta)
        out = layer_norm(add(z, feed_forward(z, params)), params.norm2_gamma, params.norm2_beta)
    if return_weights:
        return out, weights
    return out

"""Competing fusion methods: majority voting over unimodal classifiers,
MLP fusion of class tokens, and a vanilla self-attention transformer over
the concatenated token streams. All consume the same UniformTokenSet
inputs as the cascaded model, so comparisons isolate the fusion mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .attention import (
    CrossAttentionParams,
    ResidualMode,
    _ACTIVATIONS,
    ccmt_block_forward,
    init_block_params,
)
from .errors import ShapeError, ValidationError
from .tensor import Parameter, Tensor, add, add_param, add_row, concat_cols, concat_rows, matmul, ravel, take_row
from .tokens import Modality, UniformTokenSet


class FusionKind(Enum):
    MAJORITY_VOTE = "vote"
    MLP_FUSION = "mlp"
    VANILLA_TRANSFORMER = "transformer"


def majority_vote(per_modality_predictions: Sequence[int]) -> int:
    """Plurality winner; ties break toward the lowest class index."""
    preds = list(per_modality_predictions)
    if not preds:
        raise ValidationError("majority_vote needs at least one prediction")
    counts = np.bincount(np.asarray(preds, dtype=np.int64))
    return int(np.argmax(counts))


def modality_summary(sample: UniformTokenSet, m: Modality) -> np.ndarray:
    """One d_m-vector per modality: text class token (row 0), audio mean."""
    mat = sample.matrix(m)
    if m == Modality.AUDIO:
        return mat.mean(axis=0)
    return mat[0]


@dataclass
class UnimodalMLPConfig:
    modality: Modality
    width: int
    num_classes: int
    k: int
    hidden: Optional[int] = None
    activation: str = "gelu"

    @property
    def hidden_width(self) -> int:
        return self.hidden if self.hidden is not None else self.width


@dataclass
class UnimodalMLP:
    """Small classifier on one modality's summary vector."""

    config: UnimodalMLPConfig
    params: Dict[str, Parameter]
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def forward_sample(self, sample: UniformTokenSet) -> Tensor:
        x = Tensor(modality_summary(sample, self.config.modality).reshape(1, -1))
        act = _ACTIVATIONS[self.config.activation]
        h = act(add_row(matmul(x, self.w1), self.b1))
        return ravel(add_row(matmul(h, self.w2), self.b2))


def build_unimodal_mlp(config: UnimodalMLPConfig, seed: int) -> UnimodalMLP:
    rng = np.random.default_rng(seed)
    params: Dict[str, Parameter] = {}
    w1 = add_param(params, "w1", rng.normal(0.0, 0.02, (config.width, config.hidden_width))).tensor
    b1 = add_param(params, "b1", np.zeros(config.hidden_width)).tensor
    w2 = add_param(
        params, "w2", rng.normal(0.0, 0.02, (config.hidden_width, config.num_classes))
    ).tensor
    b2 = add_param(params, "b2", np.zeros(config.num_classes)).tensor
    return UnimodalMLP(config=config, params=params, w1=w1, b1=b1, w2=w2, b2=b2)


@dataclass
class MLPFusionConfig:
    widths: Tuple[int, int, int]
    num_classes: int
    k: int
    hidden: Optional[int] = None
    activation: str = "gelu"

    @property
    def hidden_width(self) -> int:
        return self.hidden if self.hidden is not None else self.widths[0]


@dataclass
class MLPFusionParams:
    config: MLPFusionConfig
    params: Dict[str, Parameter]
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def forward_sample(self, sample: UniformTokenSet) -> Tensor:
        tokens = [
            Tensor(modality_summary(sample, m).reshape(1, -1)) for m in Modality
        ]
        return mlp_fusion_forward(tokens, self)


def mlp_fusion_forward(class_tokens, params: MLPFusionParams) -> Tensor:
    """Concatenate the three per-modality summary tokens and classify."""
    ts = []
    for m, t in zip(Modality, class_tokens):
        t = t if isinstance(t, Tensor) else Tensor(t)
        if t.data.ndim == 1:
            t = Tensor(t.data.reshape(1, -1), requires_grad=t.requires_grad)
        want = params.config.widths[int(m)]
        if t.shape != (1, want):
            raise ShapeError(f"{m.name} summary must have width {want}, got {t.shape}")
        ts.append(t)
    x = concat_cols(ts)
    act = _ACTIVATIONS[params.config.activation]
    h = act(add_row(matmul(x, params.w1), params.b1))
    return ravel(add_row(matmul(h, params.w2), params.b2))


def build_mlp_fusion(config: MLPFusionConfig, seed: int) -> MLPFusionParams:
    rng = np.random.default_rng(seed)
    params: Dict[str, Parameter] = {}
    total = sum(config.widths)
    w1 = add_param(params, "w1", rng.normal(0.0, 0.02, (total, config.hidden_width))).tensor
    b1 = add_param(params, "b1", np.zeros(config.hidden_width)).tensor
    w2 = add_param(
        params, "w2", rng.normal(0.0, 0.02, (config.hidden_width, config.num_classes))
    ).tensor
    b2 = add_param(params, "b2", np.zeros(config.num_classes)).tensor
    return MLPFusionParams(config=config, params=params, w1=w1, b1=b1, w2=w2, b2=b2)


@dataclass
class VanillaFusionConfig:
    """Self-attention fusion over [class token; all 3k modality tokens]."""

    num_classes: int
    k: int = 100
    d: int = 512
    d_h: int = 512
    heads: int = 8
    depth: int = 8
    d_ff: Optional[int] = None
    mlp_hidden: Optional[int] = None
    activation: str = "gelu"

    def __post_init__(self):
        for name in ("num_classes", "k", "d", "d_h", "heads"):
            if getattr(self, name) < 1:
                raise ValidationError(f"config field {name} must be positive")
        if self.depth < 0:
            raise ValidationError("depth must be >= 0")

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d

    @property
    def head_hidden(self) -> int:
        return self.mlp_hidden if self.mlp_hidden is not None else self.d


@dataclass
class VanillaTransformerFusion:
    config: VanillaFusionConfig
    params: Dict[str, Parameter]
    cls: Tensor
    pos: Tensor
    blocks: List[CrossAttentionParams]
    head_w1: Tensor
    head_b1: Tensor
    head_w2: Tensor
    head_b2: Tensor

    def forward_sample(self, sample: UniformTokenSet) -> Tensor:
        mats = [Tensor(m) for m in sample.matrices()]
        return vanilla_transformer_fusion(mats, self)


def vanilla_transformer_fusion(all_tokens, params: VanillaTransformerFusion) -> Tensor:
    """Standard post-norm self-attention stack; the head reads row 0,
    which is a learned class token prepended to the 3k input tokens.

    all_tokens: one (3k, d) matrix, or the three (k, d) modality matrices.
    """
    cfg = params.config
    if isinstance(all_tokens, (Tensor, np.ndarray)):
        t = all_tokens if isinstance(all_tokens, Tensor) else Tensor(all_tokens)
        if t.shape != (3 * cfg.k, cfg.d):
            raise ShapeError(
                f"concatenated tokens must have shape {(3 * cfg.k, cfg.d)}, got {t.shape}"
            )
        ts = [t]
    else:
        ts = []
        for m, t in zip(Modality, all_tokens):
            t = t if isinstance(t, Tensor) else Tensor(t)
            if t.shape != (cfg.k, cfg.d):
                raise ShapeError(
                    f"{m.name} tokens must have shape {(cfg.k, cfg.d)}, got {t.shape}"
                )
            ts.append(t)
    x = concat_rows([params.cls] + ts)
    x = add(x, params.pos)
    for bp in params.blocks:
        x = ccmt_block_forward(x, x, bp, ResidualMode.KV_RESIDUAL)
    row0 = take_row(x, 0)
    act = _ACTIVATIONS[cfg.activation]
    h = act(add_row(matmul(row0, params.head_w1), params.head_b1))
    return ravel(add_row(matmul(h, params.head_w2), params.head_b2))


def build_vanilla_fusion(config: VanillaFusionConfig, seed: int) -> VanillaTransformerFusion:
    rng = np.random.default_rng(seed)
    params: Dict[str, Parameter] = {}
    cls = add_param(params, "cls", rng.normal(0.0, 0.02, (1, config.d))).tensor
    pos = add_param(params, "pos", rng.normal(0.0, 0.02, (3 * config.k + 1, config.d))).tensor
    blocks = [
        init_block_params(
            params, f"block.{i}", rng, config.d, config.d_h, config.heads,
            config.ff_width, config.activation,
        )
        for i in range(config.depth)
    ]
    head_w1 = add_param(params, "head.w1", rng.normal(0.0, 0.02, (config.d, config.head_hidden))).tensor
    head_b1 = add_param(params, "head.b1", np.zeros(config.head_hidden)).tensor
    head_w2 = add_param(
        params, "head.w2", rng.normal(0.0, 0.02, (config.head_hidden, config.num_classes))
    ).tensor
    head_b2 = add_param(params, "head.b2", np.zeros(config.num_classes)).tensor
    return VanillaTransformerFusion(
        config=config,
        params=params,
        cls=cls,
        pos=pos,
        blocks=blocks,
        head_w1=head_w1,
        head_b1=head_b1,
        head_w2=head_w2,
        head_b2=head_b2,
    )


@dataclass
class VotingEnsemble:
    """Majority vote over three separately trained unimodal classifiers."""

    members: Tuple[UnimodalMLP, UnimodalMLP, UnimodalMLP]

    @property
    def config(self):
        return self.members[0].config

    def predict_sample(self, sample: UniformTokenSet) -> int:
        votes = [int(np.argmax(m.forward_sample(sample).data)) for m in self.members]
        return majority_vote(votes)

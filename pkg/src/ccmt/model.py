"""The cascaded fusion model: positional embeddings, two cross-attention
stacks, class-token readout, and an MLP head.

Stack wiring: block 1 fuses the two text modalities (queries from the
translated language by default, keys/values from the original language,
which carries the residual stream), repeated L1 times into T_c. Block 2
runs audio queries against the T_c stream L2 times into T_o. Row 0 of the
final stream is the class token and feeds the head. In QUERY_RESIDUAL mode
the residual stream switches to the query side (see decisions in
attention.ResidualMode), so the stacks evolve the query stream instead.

Model files: magic "CCMTMDL", u32 version, length-prefixed canonical JSON
config, parameter table sorted by name (u16 name length + name, u8 ndim,
u32 dims, float64 little-endian values), then CRC32 over all preceding
bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .attention import (
    CrossAttentionParams,
    ResidualMode,
    _ACTIVATIONS,
    block_param_count,
    ccmt_block_forward,
    init_block_params,
)
from .errors import ModelFormatError, ShapeError, ValidationError
from .tensor import Parameter, Tensor, add, add_param, add_row, matmul, ravel, take_row
from .tokens import Modality, UniformTokenSet

MODEL_MAGIC = b"CCMTMDL"
MODEL_VERSION = 1

PAIR_MODES = (None, "text_audio", "text_text")


@dataclass
class CCMTConfig:
    """Architecture and ablation knobs. Defaults follow the reference setup
    (k=100 tokens, width 512, 8 heads of width 512, L1=L2=8)."""

    num_classes: int
    k: int = 100
    d: int = 512
    d_h: int = 512
    heads: int = 8
    l1: int = 8
    l2: int = 8
    d_ff: Optional[int] = None  # None -> 4*d
    mlp_hidden: Optional[int] = None  # None -> d
    residual_mode: ResidualMode = ResidualMode.KV_RESIDUAL
    input_projection: bool = False
    query_modality_block1: Modality = Modality.TEXT_TRANSLATED
    activation: str = "gelu"
    pair_mode: Optional[str] = None
    modality_widths: Optional[Tuple[int, int, int]] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("num_classes", "k", "d", "d_h", "heads", "l1", "l2"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValidationError(f"config field {name} must be a positive integer, got {v!r}")
        for name in ("d_ff", "mlp_hidden"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < 1):
                raise ValidationError(f"config field {name} must be a positive integer or None")
        if not isinstance(self.residual_mode, ResidualMode):
            raise ValidationError("config field residual_mode must be a ResidualMode")
        if self.query_modality_block1 not in (Modality.TEXT_ORIGINAL, Modality.TEXT_TRANSLATED):
            raise ValidationError("config field query_modality_block1 must name a text modality")
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(f"config field activation must be one of {sorted(_ACTIVATIONS)}")
        if self.pair_mode not in PAIR_MODES:
            raise ValidationError(f"config field pair_mode must be one of {PAIR_MODES}")
        if self.modality_widths is not None:
            ws = tuple(self.modality_widths)
            if len(ws) != 3 or any(not isinstance(w, int) or w < 1 for w in ws):
                raise ValidationError("config field modality_widths must be three positive ints")
            self.modality_widths = ws

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.d

    @property
    def head_hidden(self) -> int:
        return self.mlp_hidden if self.mlp_hidden is not None else self.d

    def width_of(self, m: Modality) -> int:
        if self.modality_widths is None:
            return self.d
        return self.modality_widths[int(m)]

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "k": self.k,
            "d": self.d,
            "d_h": self.d_h,
            "heads": self.heads,
            "l1": self.l1,
            "l2": self.l2,
            "d_ff": self.d_ff,
            "mlp_hidden": self.mlp_hidden,
            "residual_mode": self.residual_mode.value,
            "input_projection": self.input_projection,
            "query_modality_block1": self.query_modality_block1.name,
            "activation": self.activation,
            "pair_mode": self.pair_mode,
            "modality_widths": list(self.modality_widths) if self.modality_widths else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CCMTConfig":
        d = dict(d)
        d["residual_mode"] = ResidualMode(d["residual_mode"])
        d["query_modality_block1"] = Modality[d["query_modality_block1"]]
        if d.get("modality_widths") is not None:
            d["modality_widths"] = tuple(d["modality_widths"])
        return cls(**d)


_MODALITY_KEYS = {
    Modality.TEXT_ORIGINAL: "text_original",
    Modality.TEXT_TRANSLATED: "text_translated",
    Modality.AUDIO: "audio",
}


@dataclass
class CCMTModel:
    config: CCMTConfig
    params: Dict[str, Parameter]
    pos: Dict[Modality, Tensor]
    block1: List[CrossAttentionParams]
    block2: List[CrossAttentionParams]
    head_w1: Tensor
    head_b1: Tensor
    head_w2: Tensor
    head_b2: Tensor
    adapters: Dict[Modality, Tensor] = field(default_factory=dict)
    input_proj: Optional[Dict[Modality, Tuple[Tensor, Tensor]]] = None

    def forward_sample(self, sample: UniformTokenSet) -> Tensor:
        return forward(self, sample)

    def class_embedding(self, sample: UniformTokenSet) -> np.ndarray:
        ts = [Tensor(m) for m in sample.matrices()]
        _, _, t_o = _forward_streams(self, *ts)
        return t_o.data[0].copy()


def build_model(config: CCMTConfig, seed: int, init_std: float = 0.02) -> CCMTModel:
    """Deterministically initialize a model: same (config, seed), same bits.

    Projections draw N(0, init_std) in a fixed creation order; norm scales
    start at one, every bias at zero. Training uses the 0.02 default;
    gradient verification builds with a larger init_std because the default
    leaves query-path gradients below finite-difference resolution.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    params: Dict[str, Parameter] = {}

    def mat(name, shape):
        return add_param(params, name, rng.normal(0.0, init_std, shape)).tensor

    adapters = {}
    for m in Modality:
        w = config.width_of(m)
        if w != config.d:
            adapters[m] = mat(f"adapter.{_MODALITY_KEYS[m]}", (w, config.d))

    input_proj = None
    if config.input_projection:
        input_proj = {}
        for m in Modality:
            pw = mat(f"inproj.{_MODALITY_KEYS[m]}.w", (config.d, config.d))
            pb = add_param(params, f"inproj.{_MODALITY_KEYS[m]}.b", np.zeros(config.d)).tensor
            input_proj[m] = (pw, pb)

    pos = {m: mat(f"pos.{_MODALITY_KEYS[m]}", (config.k, config.d)) for m in Modality}

    block1 = []
    if config.pair_mode != "text_audio":
        for i in range(config.l1):
            block1.append(
                init_block_params(
                    params, f"block1.{i}", rng, config.d, config.d_h, config.heads,
                    config.ff_width, config.activation, init_std=init_std,
                )
            )
    block2 = []
    if config.pair_mode != "text_text":
        for i in range(config.l2):
            block2.append(
                init_block_params(
                    params, f"block2.{i}", rng, config.d, config.d_h, config.heads,
                    config.ff_width, config.activation, init_std=init_std,
                )
            )

    head_w1 = mat("head.w1", (config.d, config.head_hidden))
    head_b1 = add_param(params, "head.b1", np.zeros(config.head_hidden)).tensor
    head_w2 = mat("head.w2", (config.head_hidden, config.num_classes))
    head_b2 = add_param(params, "head.b2", np.zeros(config.num_classes)).tensor

    return CCMTModel(
        config=config,
        params=params,
        pos=pos,
        block1=block1,
        block2=block2,
        head_w1=head_w1,
        head_b1=head_b1,
        head_w2=head_w2,
        head_b2=head_b2,
        adapters=adapters,
        input_proj=input_proj,
    )


def parameter_count(config: CCMTConfig) -> int:
    """Closed-form parameter count; cross-checked by enumeration in tests.

    per block: heads*3*d*d_h + heads*d_h*d + 4*d + d*d_ff + d_ff + d_ff*d + d
    model: blocks + 3*k*d positional + head (d*h + h + h*C + C)
           + input projection 3*(d*d + d) when enabled
           + one (d_m, d) adapter per modality whose width differs from d
    """
    d, d_h, heads, d_ff = config.d, config.d_h, config.heads, config.ff_width
    n_blocks = (config.l1 if config.pair_mode != "text_audio" else 0) + (
        config.l2 if config.pair_mode != "text_text" else 0
    )
    total = n_blocks * block_param_count(d, d_h, heads, d_ff)
    total += 3 * config.k * d
    h = config.head_hidden
    total += d * h + h + h * config.num_classes + config.num_classes
    if config.input_projection:
        total += 3 * (d * d + d)
    for m in Modality:
        if config.width_of(m) != d:
            total += config.width_of(m) * d
    return total


def _forward_streams(model: CCMTModel, t_orig: Tensor, t_trans: Tensor, t_audio: Tensor):
    cfg = model.config
    tens = {
        Modality.TEXT_ORIGINAL: t_orig,
        Modality.TEXT_TRANSLATED: t_trans,
        Modality.AUDIO: t_audio,
    }
    proc = {}
    for m in Modality:
        x = tens[m]
        want = (cfg.k, cfg.width_of(m))
        if x.shape != want:
            raise ShapeError(f"{m.name} tokens must have shape {want}, got {x.shape}")
        if m in model.adapters:
            x = matmul(x, model.adapters[m])
        if model.input_proj is not None:
            pw, pb = model.input_proj[m]
            x = add_row(matmul(x, pw), pb)
        proc[m] = add(x, model.pos[m])

    mode = cfg.residual_mode
    q_mod = cfg.query_modality_block1
    kv_mod = (
        Modality.TEXT_TRANSLATED
        if q_mod == Modality.TEXT_ORIGINAL
        else Modality.TEXT_ORIGINAL
    )

    if cfg.pair_mode == "text_audio":
        t_c = proc[Modality.TEXT_ORIGINAL]
    elif mode == ResidualMode.QUERY_RESIDUAL:
        stream = proc[q_mod]
        for bp in model.block1:
            stream = ccmt_block_forward(stream, proc[kv_mod], bp, mode)
        t_c = stream
    else:
        stream = proc[kv_mod]
        for bp in model.block1:
            stream = ccmt_block_forward(proc[q_mod], stream, bp, mode)
        t_c = stream

    if cfg.pair_mode == "text_text":
        t_o = t_c
    elif mode == ResidualMode.QUERY_RESIDUAL:
        stream = proc[Modality.AUDIO]
        for bp in model.block2:
            stream = ccmt_block_forward(stream, t_c, bp, mode)
        t_o = stream
    else:
        stream = t_c
        for bp in model.block2:
            stream = ccmt_block_forward(proc[Modality.AUDIO], stream, bp, mode)
        t_o = stream

    cls = take_row(t_o, 0)
    act = _ACTIVATIONS[cfg.activation]
    hidden = act(add_row(matmul(cls, model.head_w1), model.head_b1))
    logits = ravel(add_row(matmul(hidden, model.head_w2), model.head_b2))
    return logits, t_c, t_o


def forward_tokens(model: CCMTModel, t_orig: Tensor, t_trans: Tensor, t_audio: Tensor) -> Tensor:
    """Forward from explicit token tensors (differentiable w.r.t. inputs)."""
    logits, _, _ = _forward_streams(model, t_orig, t_trans, t_audio)
    return logits


def forward(model: CCMTModel, sample: UniformTokenSet) -> Tensor:
    """Forward one assembled sample to a (num_classes,) logit tensor."""
    ts = [Tensor(m) for m in sample.matrices()]
    logits, _, _ = _forward_streams(model, *ts)
    return logits


def predict(model: CCMTModel, sample: UniformTokenSet) -> int:
    """Argmax class; exact ties resolve to the lowest class index."""
    return int(np.argmax(forward(model, sample).data))


def _pack_params(model: CCMTModel) -> bytes:
    chunks = [struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        t = model.params[name].tensor
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", t.data.ndim))
        for dim in t.data.shape:
            chunks.append(struct.pack("<I", dim))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_model(model: CCMTModel, path) -> None:
    cfg_json = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    body = (
        MODEL_MAGIC
        + struct.pack("<I", MODEL_VERSION)
        + struct.pack("<I", len(cfg_json))
        + cfg_json
        + _pack_params(model)
    )
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", crc))


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError(
                f"model file truncated: needed {n} bytes at offset {self.pos}, "
                f"have {len(self.buf) - self.pos}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_model(path) -> CCMTModel:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MODEL_MAGIC) + 8:
        raise ModelFormatError("model file too short")
    if raw[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {raw[:7]!r}, expected {MODEL_MAGIC!r}")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    actual_crc = zlib.crc32(raw[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ModelFormatError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    cur = _Cursor(raw[:-4])
    cur.take(len(MODEL_MAGIC))
    version = cur.u32()
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    cfg_len = cur.u32()
    try:
        cfg = CCMTConfig.from_dict(json.loads(cur.take(cfg_len).decode("utf-8")))
    except (ValueError, KeyError, TypeError) as e:
        raise ModelFormatError(f"bad config block: {e}") from e

    model = build_model(cfg, seed=0)
    count = cur.u32()
    if count != len(model.params):
        raise ModelFormatError(
            f"parameter count {count} does not match config ({len(model.params)})"
        )
    seen = set()
    for _ in range(count):
        name = cur.take(cur.u16()).decode("utf-8")
        if name not in model.params:
            raise ModelFormatError(f"unknown parameter {name!r} for this config")
        if name in seen:
            raise ModelFormatError(f"duplicate parameter {name!r}")
        seen.add(name)
        ndim = cur.u8()
        shape = tuple(cur.u32() for _ in range(ndim))
        t = model.params[name].tensor
        if shape != t.data.shape:
            raise ModelFormatError(f"parameter {name!r} has shape {shape}, expected {t.data.shape}")
        n = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(cur.take(8 * n), dtype="<f8").reshape(shape)
        t.data[...] = values
    if cur.pos != len(cur.buf):
        raise ModelFormatError(f"{len(cur.buf) - cur.pos} trailing bytes after parameter table")
    return model

"""Cascaded cross-modal transformer.

Two cross-attention stages: the first fuses the two text streams (English
tokens query, French tokens provide keys and values), the second fuses the
result with audio (audio tokens query, stage-one output provides keys,
audio provides values). Row 0 of the final token matrix — the audio-side
class position — feeds two single-logit classifier heads.

Block structure, kept exactly in the published residual form:

    U = row_softmax(Q K^T / sqrt(d_h)) V      per head, heads concatenated
    Y = U_cat M
    Z = Y + Norm(Y)
    out = Z + FF(Norm(Z))

where FF is a two-layer GELU map d -> 4d -> d. Note the residual feeds from
Y, not from the block input; set ``standard_residual`` for the conventional
post-norm variant (out = Norm2(Z + FF(Z)), Z = Norm1(input + Y)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .rng import Rng
from .tensor import (
    Tensor,
    add,
    add_bias,
    concat,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    reshape,
    row_softmax,
    scale,
    transpose,
)
from .tokens import Modality, TokenSet, prepend_class_token, uniformize


@dataclass
class CcmtConfig:
    d: int
    k: int = 100
    heads: int = 1
    d_h: int | None = None  # defaults to d // heads
    d_mlp: int | None = None  # classifier head width, defaults to 4d
    depth: int = 1
    eps: float = 1e-5
    standard_residual: bool = False
    init_scheme: str = "xavier_normal"
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2 (class token plus at least one token)")
        if self.d < 1 or self.heads < 1 or self.depth < 1:
            raise ValueError("d, heads and depth must be positive")
        if self.d_h is None:
            if self.d % self.heads != 0:
                raise ValueError(f"d={self.d} not divisible by heads={self.heads}; set d_h explicitly")
            self.d_h = self.d // self.heads
        if self.d_mlp is None:
            self.d_mlp = 4 * self.d
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.init_scheme != "xavier_normal":
            raise ValueError(f"unknown init scheme {self.init_scheme!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MlpHeadParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


@dataclass
class CrossAttentionBlockParams:
    w_q: list[Tensor]  # per head, d x d_h
    w_k: list[Tensor]
    w_v: list[Tensor]
    proj: Tensor  # (heads * d_h) x d, restores token dimensionality
    norm1_gain: Tensor
    norm1_bias: Tensor
    norm2_gain: Tensor
    norm2_bias: Tensor
    ff_w1: Tensor  # d x 4d
    ff_b1: Tensor
    ff_w2: Tensor  # 4d x d
    ff_b2: Tensor

    def named(self, prefix: str):
        for h, (wq, wk, wv) in enumerate(zip(self.w_q, self.w_k, self.w_v)):
            yield f"{prefix}.head{h}.w_q", wq
            yield f"{prefix}.head{h}.w_k", wk
            yield f"{prefix}.head{h}.w_v", wv
        yield f"{prefix}.proj", self.proj
        yield f"{prefix}.norm1_gain", self.norm1_gain
        yield f"{prefix}.norm1_bias", self.norm1_bias
        yield f"{prefix}.norm2_gain", self.norm2_gain
        yield f"{prefix}.norm2_bias", self.norm2_bias
        yield f"{prefix}.ff_w1", self.ff_w1
        yield f"{prefix}.ff_b1", self.ff_b1
        yield f"{prefix}.ff_w2", self.ff_w2
        yield f"{prefix}.ff_b2", self.ff_b2


@dataclass
class CcmtParams:
    config: CcmtConfig
    blocks1: list[CrossAttentionBlockParams]
    blocks2: list[CrossAttentionBlockParams]
    pos_embed: dict[Modality, Tensor]  # k x d, distinct per modality
    audio_class_token: Tensor  # d
    head_request: MlpHeadParams
    head_complaint: MlpHeadParams

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for i, b in enumerate(self.blocks1):
            out.extend(b.named(f"block1.{i}"))
        for i, b in enumerate(self.blocks2):
            out.extend(b.named(f"block2.{i}"))
        for m in sorted(self.pos_embed, key=lambda m: m.value):
            out.append((f"pos_embed.{m.value}", self.pos_embed[m]))
        out.append(("audio_class_token", self.audio_class_token))
        out.extend(self.head_request.named("head_request"))
        out.extend(self.head_complaint.named("head_complaint"))
        return out


def xavier_normal(rng: Rng, rows: int, cols: int) -> Tensor:
    """Weights ~ N(0, 2/(fan_in+fan_out))."""
    sigma = math.sqrt(2.0 / (rows + cols))
    return Tensor(rng.gaussian_array((rows, cols), sigma).astype("float32"), requires_grad=True)


def zeros_param(*shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype="float32"), requires_grad=True)


def ones_param(*shape) -> Tensor:
    return Tensor(np.ones(shape, dtype="float32"), requires_grad=True)


def init_block(cfg: CcmtConfig, rng: Rng) -> CrossAttentionBlockParams:
    d, d_h, h = cfg.d, cfg.d_h, cfg.heads
    return CrossAttentionBlockParams(
        w_q=[xavier_normal(rng, d, d_h) for _ in range(h)],
        w_k=[xavier_normal(rng, d, d_h) for _ in range(h)],
        w_v=[xavier_normal(rng, d, d_h) for _ in range(h)],
        proj=xavier_normal(rng, h * d_h, d),
        norm1_gain=ones_param(d),
        norm1_bias=zeros_param(d),
        norm2_gain=ones_param(d),
        norm2_bias=zeros_param(d),
        ff_w1=xavier_normal(rng, d, 4 * d),
        ff_b1=zeros_param(4 * d),
        ff_w2=xavier_normal(rng, 4 * d, d),
        ff_b2=zeros_param(d),
    )


def init_head(cfg: CcmtConfig, rng: Rng) -> MlpHeadParams:
    return MlpHeadParams(
        w1=xavier_normal(rng, cfg.d, cfg.d_mlp),
        b1=zeros_param(cfg.d_mlp),
        w2=xavier_normal(rng, cfg.d_mlp, 1),
        b2=zeros_param(1),
    )


def init_params(
    cfg: CcmtConfig,
    rng: Rng | None = None,
    modalities: tuple[Modality, ...] = (Modality.TEXT_FR, Modality.TEXT_EN, Modality.AUDIO),
) -> CcmtParams:
    """Deterministic init: same seed, bit-identical parameters."""
    if rng is None:
        rng = Rng(cfg.seed)
    blocks1 = [init_block(cfg, rng) for _ in range(cfg.depth)]
    blocks2 = [init_block(cfg, rng) for _ in range(cfg.depth)]
    pos = {
        m: Tensor(rng.gaussian_array((cfg.k, cfg.d), 0.02).astype("float32"), requires_grad=True)
        for m in modalities
    }
    cls = Tensor(rng.gaussian_array((cfg.d,), 0.02).astype("float32"), requires_grad=True)
    return CcmtParams(
        config=cfg,
        blocks1=blocks1,
        blocks2=blocks2,
        pos_embed=pos,
        audio_class_token=cls,
        head_request=init_head(cfg, rng),
        head_complaint=init_head(cfg, rng),
    )


def params_to_double(container) -> None:
    """Convert every named tensor to float64 in place (gradcheck mode)."""
    for _, t in container.named_tensors():
        t.data = t.data.astype(np.float64)
        t.grad = None


def add_positional(ts: TokenSet, params: CcmtParams) -> TokenSet:
    """Add this modality's positional rows (class row included)."""
    if ts.modality not in params.pos_embed:
        raise ValueError(f"no positional embedding configured for modality {ts.modality.value!r}")
    pos = params.pos_embed[ts.modality]
    if pos.data.shape != ts.tokens.data.shape:
        raise ValueError(
            f"token set must be uniformized to k={pos.data.shape[0]} rows before "
            f"positional encoding; got {ts.tokens.data.shape}"
        )
    return TokenSet(ts.modality, add(ts.tokens, pos), ts.has_class_token)


def feed_forward(x: Tensor, p: CrossAttentionBlockParams) -> Tensor:
    hidden = gelu(add_bias(matmul(x, p.ff_w1), p.ff_b1))
    return add_bias(matmul(hidden, p.ff_w2), p.ff_b2)


def cross_attention_block(
    q_src: Tensor,
    k_src: Tensor,
    v_src: Tensor,
    p: CrossAttentionBlockParams,
    eps: float = 1e-5,
    standard_residual: bool = False,
) -> Tensor:
    """One attention block; queries, keys and values may come from
    different token matrices. Output has the query matrix's row count."""
    if q_src.data.shape[1] != k_src.data.shape[1] or k_src.data.shape[1] != v_src.data.shape[1]:
        raise ValueError(
            f"query/key/value widths disagree: {q_src.data.shape}, {k_src.data.shape}, {v_src.data.shape}"
        )
    if k_src.data.shape[0] != v_src.data.shape[0]:
        raise ValueError(
            f"key/value row counts disagree: {k_src.data.shape} vs {v_src.data.shape}"
        )
    d_h = p.w_q[0].data.shape[1]
    head_outputs = []
    for wq, wk, wv in zip(p.w_q, p.w_k, p.w_v):
        q = matmul(q_src, wq)
        k = matmul(k_src, wk)
        v = matmul(v_src, wv)
        attn = row_softmax(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_h)))
        head_outputs.append(matmul(attn, v))
    u = head_outputs[0] if len(head_outputs) == 1 else concat(head_outputs, axis=1)
    y = matmul(u, p.proj)
    if standard_residual:
        z = layer_norm(add(q_src, y), p.norm1_gain, p.norm1_bias, eps)
        return layer_norm(add(z, feed_forward(z, p)), p.norm2_gain, p.norm2_bias, eps)
    z = add(y, layer_norm(y, p.norm1_gain, p.norm1_bias, eps))
    return add(z, feed_forward(layer_norm(z, p.norm2_gain, p.norm2_bias, eps), p))


def mlp_head(feature_row: Tensor, head: MlpHeadParams) -> Tensor:
    """1 x d feature row -> scalar logit."""
    hidden = gelu(add_bias(matmul(feature_row, head.w1), head.b1))
    return reshape(add_bias(matmul(hidden, head.w2), head.b2), ())


def ccmt_forward(
    t_fr: TokenSet,
    t_en: TokenSet,
    t_audio: TokenSet,
    params: CcmtParams,
) -> tuple[Tensor, Tensor]:
    """Run the cascade on prepared token sets (uniformized to k rows each,
    positionally encoded, audio class token already attached).

    Returns the (request, complaint) logits read from the audio-side class
    position of the stage-two output.
    """
    cfg = params.config
    for ts, name in ((t_fr, "text_fr"), (t_en, "text_en"), (t_audio, "audio")):
        if ts is None:
            raise ValueError(f"missing modality {name}: the cascade needs all three token sets")
        if ts.tokens.data.shape != (cfg.k, cfg.d):
            raise ValueError(
                f"{name} tokens must be {cfg.k}x{cfg.d} after preparation, got {ts.tokens.data.shape}"
            )
    stream = t_en.tokens
    for block in params.blocks1:
        stream = cross_attention_block(
            stream, t_fr.tokens, t_fr.tokens, block, cfg.eps, cfg.standard_residual
        )
    t_c = stream
    stream = t_audio.tokens
    for block in params.blocks2:
        # Queries and values follow the audio-side stream; keys stay on the
        # text-cascade output.
        stream = cross_attention_block(
            stream, t_c, stream, block, cfg.eps, cfg.standard_residual
        )
    class_row = gather_rows(stream, [0])
    return mlp_head(class_row, params.head_request), mlp_head(class_row, params.head_complaint)


def prepare_token_set(
    ts: TokenSet,
    params: CcmtParams,
    rng: Rng,
) -> TokenSet:
    """Full per-modality pipeline: attach the learnable audio class token
    when needed, uniformize to k rows, add positional encodings."""
    cfg = params.config
    if ts.modality is Modality.AUDIO and not ts.has_class_token:
        ts = prepend_class_token(ts, params.audio_class_token)
    ts = uniformize(ts, cfg.k, rng)
    return add_positional(ts, params)

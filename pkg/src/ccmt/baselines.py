"""Fusion strategies behind one trainable-fuser interface.

Four kinds, all supporting arbitrary nonempty modality subsets:

  * ``voting``      — independent per-modality mean-pool MLPs, fused at
                      prediction time by plurality vote (ties predict 1)
  * ``mlp``         — class-token / mean-pool features concatenated into a
                      single two-logit MLP
  * ``transformer`` — learnable fusion class token prepended to the
                      concatenation of all modality token matrices, then
                      self-attention blocks sharing the cascade's block
                      structure, heads reading the fusion token
  * ``ccmt``        — the cascaded cross-attention model; with two
                      modalities it degenerates to a single cross-attention
                      stage (audio, when present, supplies queries and
                      values; otherwise the English stream queries the
                      French one), and with one to plain self-attention

Every fuser exposes ``sample_loss`` / ``predict_logits`` / ``named_tensors``
so the training loop never branches on kind.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import (
    CcmtConfig,
    CcmtParams,
    CrossAttentionBlockParams,
    MlpHeadParams,
    ccmt_forward,
    cross_attention_block,
    init_block,
    init_head,
    init_params,
    mlp_head,
    prepare_token_set,
    xavier_normal,
    zeros_param,
)
from .rng import Rng
from .tensor import (
    Tensor,
    add,
    add_bias,
    bce_with_logits,
    concat,
    gather_rows,
    gelu,
    matmul,
    mean_rows,
    reshape,
    scale,
    transpose,
)
from .tokens import Modality, SampleRecord, TokenSet, uniformize


class FuserKind(str, Enum):
    VOTING = "voting"
    MLP = "mlp"
    TRANSFORMER = "transformer"
    CCMT = "ccmt"


@dataclass
class FuserSpec:
    kind: FuserKind
    modalities: tuple[Modality, ...]
    k: int = 100
    depth: int = 1
    heads: int = 1
    d_h: int | None = None
    d_mlp: int | None = None
    hidden_factor: int = 4  # MLP/unimodal hidden width = factor * d
    standard_residual: bool = False

    def __post_init__(self):
        self.kind = FuserKind(self.kind)
        self.modalities = tuple(Modality(m) for m in self.modalities)
        if not self.modalities:
            raise ValueError("a fuser needs at least one modality")
        if len(set(self.modalities)) != len(self.modalities):
            raise ValueError(f"duplicate modalities in {self.modalities}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "modalities": [m.value for m in self.modalities],
            "k": self.k,
            "depth": self.depth,
            "heads": self.heads,
            "d_h": self.d_h,
            "d_mlp": self.d_mlp,
            "hidden_factor": self.hidden_factor,
            "standard_residual": self.standard_residual,
        }

    @staticmethod
    def from_dict(d: dict) -> "FuserSpec":
        return FuserSpec(
            kind=FuserKind(d["kind"]),
            modalities=tuple(Modality(m) for m in d["modalities"]),
            k=d.get("k", 100),
            depth=d.get("depth", 1),
            heads=d.get("heads", 1),
            d_h=d.get("d_h"),
            d_mlp=d.get("d_mlp"),
            hidden_factor=d.get("hidden_factor", 4),
            standard_residual=d.get("standard_residual", False),
        )


def plurality_vote(preds: list[tuple[int, int]]) -> tuple[int, int]:
    """Majority per task over binary (request, complaint) votes; ties -> 1."""
    if not preds:
        raise ValueError("plurality_vote needs at least one voter")
    n = len(preds)
    ones_r = sum(p[0] for p in preds)
    ones_c = sum(p[1] for p in preds)
    return (1 if 2 * ones_r >= n else 0, 1 if 2 * ones_c >= n else 0)


def _column_logit(row_of_logits: Tensor, col: int) -> Tensor:
    return reshape(gather_rows(transpose(row_of_logits), [col]), ())


@dataclass
class TwoLogitMlpParams:
    """in_dim -> hidden -> 2 logits."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


def init_two_logit_mlp(rng: Rng, in_dim: int, hidden: int) -> TwoLogitMlpParams:
    return TwoLogitMlpParams(
        w1=xavier_normal(rng, in_dim, hidden),
        b1=zeros_param(hidden),
        w2=xavier_normal(rng, hidden, 2),
        b2=zeros_param(2),
    )


def two_logit_mlp(feature_row: Tensor, p: TwoLogitMlpParams) -> tuple[Tensor, Tensor]:
    hidden = gelu(add_bias(matmul(feature_row, p.w1), p.b1))
    out = add_bias(matmul(hidden, p.w2), p.b2)  # 1 x 2
    return _column_logit(out, 0), _column_logit(out, 1)


def unimodal_forward(ts: TokenSet, params: TwoLogitMlpParams) -> tuple[Tensor, Tensor]:
    """Mean-pool the token rows, classify with a two-logit MLP."""
    return two_logit_mlp(mean_rows(ts.tokens), params)


def class_feature(ts: TokenSet) -> Tensor:
    """1 x d summary row: the class token if present, else the token mean."""
    if ts.has_class_token:
        return gather_rows(ts.tokens, [0])
    return mean_rows(ts.tokens)


def mlp_fusion_forward(
    class_features: list[Tensor], params: TwoLogitMlpParams
) -> tuple[Tensor, Tensor]:
    """Concatenate per-modality feature rows and classify."""
    feat = class_features[0] if len(class_features) == 1 else concat(class_features, axis=1)
    if feat.data.shape[1] != params.w1.data.shape[0]:
        raise ValueError(
            f"feature width {feat.data.shape[1]} does not match fusion MLP input {params.w1.data.shape[0]}"
        )
    return two_logit_mlp(feat, params)


@dataclass
class TransformerFusionParams:
    config: CcmtConfig
    fusion_class_token: Tensor
    pos_embed: dict[Modality, Tensor]
    blocks: list[CrossAttentionBlockParams]
    head_request: MlpHeadParams
    head_complaint: MlpHeadParams

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = [("fusion_class_token", self.fusion_class_token)]
        for m in sorted(self.pos_embed, key=lambda m: m.value):
            out.append((f"pos_embed.{m.value}", self.pos_embed[m]))
        for i, b in enumerate(self.blocks):
            out.extend(b.named(f"blocks.{i}"))
        out.extend(self.head_request.named("head_request"))
        out.extend(self.head_complaint.named("head_complaint"))
        return out


def transformer_fusion_forward(
    token_sets: list[TokenSet], params: TransformerFusionParams
) -> tuple[Tensor, Tensor]:
    """Self-attention over the fused (1 + n*k) x d sequence; the prepended
    fusion class token is the readout position."""
    cfg = params.config
    cls_row = reshape(params.fusion_class_token, (1, cfg.d))
    seq = concat([cls_row] + [ts.tokens for ts in token_sets], axis=0)
    for block in params.blocks:
        seq = cross_attention_block(seq, seq, seq, block, cfg.eps, cfg.standard_residual)
    class_row = gather_rows(seq, [0])
    return mlp_head(class_row, params.head_request), mlp_head(class_row, params.head_complaint)


# ---------------------------------------------------------------------------
# Trainable fuser wrappers
# ---------------------------------------------------------------------------


def _bce_pair(
    logits: tuple[Tensor, Tensor],
    labels: tuple[int, int],
    weights: tuple[float, float],
) -> Tensor:
    l_r = bce_with_logits(logits[0], np.float64(labels[0]).astype(logits[0].data.dtype))
    l_c = bce_with_logits(logits[1], np.float64(labels[1]).astype(logits[1].data.dtype))
    return add(scale(l_r, weights[0]), scale(l_c, weights[1]))


class Fuser:
    """Common surface consumed by the trainer and evaluator."""

    spec: FuserSpec
    d: int

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def predict_logits(self, record: SampleRecord, rng: Rng) -> tuple[float, float]:
        """Fused decision scores; prediction is score > 0 per task."""
        raise NotImplementedError

    def sample_loss(
        self, record: SampleRecord, rng: Rng, weights: tuple[float, float] = (1.0, 1.0)
    ) -> Tensor:
        raise NotImplementedError

    def predict(self, record: SampleRecord, rng: Rng) -> tuple[int, int]:
        lr, lc = self.predict_logits(record, rng)
        return int(lr > 0.0), int(lc > 0.0)

    def _sets(self, record: SampleRecord) -> list[TokenSet]:
        sets = []
        for m in self.spec.modalities:
            if m not in record.token_sets:
                raise ValueError(f"sample {record.id!r} lacks modality {m.value!r}")
            sets.append(record.token_sets[m])
        return sets


class VotingFuser(Fuser):
    """Independent unimodal voters; plurality vote at prediction time."""

    def __init__(self, spec: FuserSpec, d: int, rng: Rng):
        self.spec = spec
        self.d = d
        self.voters = {
            m: init_two_logit_mlp(rng, d, spec.hidden_factor * d) for m in spec.modalities
        }

    def named_tensors(self):
        out = []
        for m in self.spec.modalities:
            out.extend(self.voters[m].named(f"voter.{m.value}"))
        return out

    def _voter_logits(self, record):
        return [unimodal_forward(ts, self.voters[ts.modality]) for ts in self._sets(record)]

    def sample_loss(self, record, rng, weights=(1.0, 1.0)):
        labels = (record.label_request, record.label_complaint)
        losses = [_bce_pair(lg, labels, weights) for lg in self._voter_logits(record)]
        total = losses[0]
        for extra in losses[1:]:
            total = add(total, extra)
        return scale(total, 1.0 / len(losses))

    def predict(self, record, rng) -> tuple[int, int]:
        votes = [
            (int(lr.data > 0.0), int(lc.data > 0.0)) for lr, lc in self._voter_logits(record)
        ]
        return plurality_vote(votes)

    def predict_logits(self, record, rng):
        # Vote margin as a fused score; its sign reproduces plurality_vote
        # including the tie rule (ties land at +0.5/n > 0).
        votes = [
            (int(lr.data > 0.0), int(lc.data > 0.0)) for lr, lc in self._voter_logits(record)
        ]
        n = len(votes)
        r, c = sum(v[0] for v in votes), sum(v[1] for v in votes)
        return (2.0 * r - n + 0.5) / n, (2.0 * c - n + 0.5) / n


class MlpFuser(Fuser):
    """Concatenated class/pooled features into one fusion MLP."""

    def __init__(self, spec: FuserSpec, d: int, rng: Rng):
        self.spec = spec
        self.d = d
        n = len(spec.modalities)
        self.params = init_two_logit_mlp(rng, n * d, spec.hidden_factor * d)

    def named_tensors(self):
        return list(self.params.named("fusion_mlp"))

    def _logits(self, record):
        feats = [class_feature(ts) for ts in self._sets(record)]
        return mlp_fusion_forward(feats, self.params)

    def sample_loss(self, record, rng, weights=(1.0, 1.0)):
        return _bce_pair(self._logits(record), (record.label_request, record.label_complaint), weights)

    def predict_logits(self, record, rng):
        lr, lc = self._logits(record)
        return float(lr.data), float(lc.data)

    def predict(self, record, rng):
        lr, lc = self.predict_logits(record, rng)
        return int(lr > 0.0), int(lc > 0.0)


class TransformerFuser(Fuser):
    def __init__(self, spec: FuserSpec, d: int, rng: Rng):
        self.spec = spec
        self.d = d
        cfg = CcmtConfig(
            d=d,
            k=spec.k,
            heads=spec.heads,
            d_h=spec.d_h,
            d_mlp=spec.d_mlp,
            depth=spec.depth,
            standard_residual=spec.standard_residual,
        )
        self.params = TransformerFusionParams(
            config=cfg,
            fusion_class_token=Tensor(
                rng.gaussian_array((d,), 0.02).astype("float32"), requires_grad=True
            ),
            pos_embed={
                m: Tensor(rng.gaussian_array((cfg.k, d), 0.02).astype("float32"), requires_grad=True)
                for m in spec.modalities
            },
            blocks=[init_block(cfg, rng) for _ in range(cfg.depth)],
            head_request=init_head(cfg, rng),
            head_complaint=init_head(cfg, rng),
        )

    def named_tensors(self):
        return self.params.named_tensors()

    def _prepared(self, record, rng):
        cfg = self.params.config
        prepared = []
        for ts in self._sets(record):
            u = uniformize(ts, cfg.k, rng)
            pos = self.params.pos_embed[ts.modality]
            prepared.append(TokenSet(u.modality, add(u.tokens, pos), u.has_class_token))
        return prepared

    def _logits(self, record, rng):
        return transformer_fusion_forward(self._prepared(record, rng), self.params)

    def sample_loss(self, record, rng, weights=(1.0, 1.0)):
        return _bce_pair(self._logits(record, rng), (record.label_request, record.label_complaint), weights)

    def predict_logits(self, record, rng):
        lr, lc = self._logits(record, rng)
        return float(lr.data), float(lc.data)

    def predict(self, record, rng):
        lr, lc = self.predict_logits(record, rng)
        return int(lr > 0.0), int(lc > 0.0)


class CcmtFuser(Fuser):
    """The cascade itself, plus its reduced wirings for modality subsets."""

    def __init__(self, spec: FuserSpec, d: int, rng: Rng):
        self.spec = spec
        self.d = d
        cfg = CcmtConfig(
            d=d,
            k=spec.k,
            heads=spec.heads,
            d_h=spec.d_h,
            d_mlp=spec.d_mlp,
            depth=spec.depth,
            standard_residual=spec.standard_residual,
        )
        mods = set(spec.modalities)
        self.trimodal = mods == {Modality.TEXT_FR, Modality.TEXT_EN, Modality.AUDIO}
        if self.trimodal:
            self.params = init_params(cfg, rng)
        else:
            self.params = CcmtParams(
                config=cfg,
                blocks1=[init_block(cfg, rng) for _ in range(cfg.depth)],
                blocks2=[],
                pos_embed={
                    m: Tensor(
                        rng.gaussian_array((cfg.k, d), 0.02).astype("float32"), requires_grad=True
                    )
                    for m in spec.modalities
                },
                audio_class_token=Tensor(
                    rng.gaussian_array((d,), 0.02).astype("float32"), requires_grad=True
                ),
                head_request=init_head(cfg, rng),
                head_complaint=init_head(cfg, rng),
            )

    def named_tensors(self):
        if self.trimodal:
            return self.params.named_tensors()
        out = []
        for i, b in enumerate(self.params.blocks1):
            out.extend(b.named(f"block1.{i}"))
        for m in sorted(self.params.pos_embed, key=lambda m: m.value):
            out.append((f"pos_embed.{m.value}", self.params.pos_embed[m]))
        if Modality.AUDIO in self.spec.modalities:
            out.append(("audio_class_token", self.params.audio_class_token))
        out.extend(self.params.head_request.named("head_request"))
        out.extend(self.params.head_complaint.named("head_complaint"))
        return out

    def _logits(self, record, rng):
        prepared = {
            ts.modality: prepare_token_set(ts, self.params, rng) for ts in self._sets(record)
        }
        cfg = self.params.config
        if self.trimodal:
            return ccmt_forward(
                prepared[Modality.TEXT_FR],
                prepared[Modality.TEXT_EN],
                prepared[Modality.AUDIO],
                self.params,
            )
        mods = set(prepared)
        if len(mods) == 1:
            (only,) = prepared.values()
            q_stream, keys, values_follow_query = only.tokens, only.tokens, True
        elif Modality.AUDIO in mods:
            text = next(m for m in (Modality.TEXT_FR, Modality.TEXT_EN, Modality.TEXT_OTHER) if m in mods)
            q_stream, keys, values_follow_query = prepared[Modality.AUDIO].tokens, prepared[text].tokens, True
        else:
            # Text-only pair: English-side queries, French-side keys/values.
            q = prepared.get(Modality.TEXT_EN) or prepared[Modality.TEXT_OTHER]
            kv = prepared[Modality.TEXT_FR]
            q_stream, keys, values_follow_query = q.tokens, kv.tokens, False
        stream = q_stream
        for block in self.params.blocks1:
            values = stream if values_follow_query else keys
            stream = cross_attention_block(stream, keys, values, block, cfg.eps, cfg.standard_residual)
        class_row = gather_rows(stream, [0])
        return (
            mlp_head(class_row, self.params.head_request),
            mlp_head(class_row, self.params.head_complaint),
        )

    def sample_loss(self, record, rng, weights=(1.0, 1.0)):
        return _bce_pair(self._logits(record, rng), (record.label_request, record.label_complaint), weights)

    def predict_logits(self, record, rng):
        lr, lc = self._logits(record, rng)
        return float(lr.data), float(lc.data)

    def predict(self, record, rng):
        lr, lc = self.predict_logits(record, rng)
        return int(lr > 0.0), int(lc > 0.0)


def build_fuser(spec: FuserSpec, d: int, seed: int) -> Fuser:
    rng = Rng(seed)
    cls = {
        FuserKind.VOTING: VotingFuser,
        FuserKind.MLP: MlpFuser,
        FuserKind.TRANSFORMER: TransformerFuser,
        FuserKind.CCMT: CcmtFuser,
    }[spec.kind]
    return cls(spec, d, rng)

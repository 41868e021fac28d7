"""Training loop, Adam optimizer, UAR evaluation and experiment records.

Determinism contract: a fixed seed fixes the shuffle order, every token
re-sampling draw and the optimizer trajectory, so reruns reproduce the
history bit-exactly. Token sampling is re-drawn every epoch during training
(acting as augmentation) but frozen to a constant evaluation seed during
scoring, so dev metrics depend only on the parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import Fuser, FuserSpec, build_fuser
from .checkpoint import load_checkpoint, save_checkpoint
from .rng import Rng, hash_string, mix_seed
from .tensor import Tensor, backward, bce_with_logits, add, scale
from .tokens import SampleRecord

EVAL_SAMPLING_SEED = 0x5EED0E7A  # constant: eval token draws never vary
_SHUFFLE_TAG = 0x5F5F1E


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 30
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    k: int = 100
    loss_weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["loss_weights"] = list(self.loss_weights)
        return d


def bce_loss(
    logits: tuple[Tensor, Tensor],
    labels: tuple[int, int],
    weights: tuple[float, float] = (1.0, 1.0),
) -> Tensor:
    """Weighted two-task sigmoid cross-entropy (stable log-sum-exp form)."""
    l_r = bce_with_logits(logits[0], np.asarray(labels[0], dtype=logits[0].data.dtype))
    l_c = bce_with_logits(logits[1], np.asarray(labels[1], dtype=logits[1].data.dtype))
    return add(scale(l_r, weights[0]), scale(l_c, weights[1]))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, named_params: list[tuple[str, Tensor]]):
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in named_params}


def adam_step(named_params: list[tuple[str, Tensor]], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update; decoupled weight decay when enabled.

    Parameters with no accumulated gradient this step are treated as g = 0.
    """
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        p.data -= cfg.lr * update.astype(p.data.dtype)
        if cfg.weight_decay > 0.0:
            p.data -= (cfg.lr * cfg.weight_decay) * p.data


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class TaskMetrics:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    degenerate: bool = False  # single-class ground truth

    @property
    def recall_pos(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def recall_neg(self) -> float:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else 0.0

    @property
    def uar(self) -> float:
        if self.tp + self.fn == 0:
            return self.recall_neg  # only negatives present
        if self.tn + self.fp == 0:
            return self.recall_pos  # only positives present
        return 0.5 * (self.recall_pos + self.recall_neg)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "recall_pos": self.recall_pos, "recall_neg": self.recall_neg,
            "uar": self.uar, "degenerate": self.degenerate,
        }


@dataclass
class Metrics:
    request: TaskMetrics = field(default_factory=TaskMetrics)
    complaint: TaskMetrics = field(default_factory=TaskMetrics)

    @property
    def mean_uar(self) -> float:
        return 0.5 * (self.request.uar + self.complaint.uar)

    def to_dict(self) -> dict:
        return {
            "request": self.request.to_dict(),
            "complaint": self.complaint.to_dict(),
            "mean_uar": self.mean_uar,
        }


def _tally(task: TaskMetrics, truth: int, pred: int) -> None:
    if truth == 1:
        if pred == 1:
            task.tp += 1
        else:
            task.fn += 1
    else:
        if pred == 1:
            task.fp += 1
        else:
            task.tn += 1


def metrics_from_predictions(
    truths: list[tuple[int, int]], preds: list[tuple[int, int]]
) -> Metrics:
    m = Metrics()
    for (tr, tc), (pr, pc) in zip(truths, preds):
        _tally(m.request, tr, pr)
        _tally(m.complaint, tc, pc)
    m.request.degenerate = (m.request.tp + m.request.fn == 0) or (m.request.tn + m.request.fp == 0)
    m.complaint.degenerate = (m.complaint.tp + m.complaint.fn == 0) or (m.complaint.tn + m.complaint.fp == 0)
    return m


def _sample_rng(base_seed: int, record_id: str, epoch: int = 0) -> Rng:
    # Order-independent: derived from the id, not the iteration position.
    return Rng(mix_seed(base_seed, hash_string(record_id), epoch))


def evaluate(fuser: Fuser, records: list[SampleRecord], threshold: float = 0.5) -> Metrics:
    """Score a split. Prediction is logit > 0 (sigmoid > 0.5 at the default
    threshold); token sampling uses the constant evaluation seed. A task
    whose ground truth contains a single class gets uar = that class's
    recall and its ``degenerate`` flag set.
    """
    if not records:
        raise ValueError("evaluate needs a nonempty record list")
    logit_cut = math.log(threshold / (1.0 - threshold)) if threshold != 0.5 else 0.0
    truths, preds = [], []
    for rec in records:
        rng = _sample_rng(EVAL_SAMPLING_SEED, rec.id)
        if threshold == 0.5:
            pr, pc = fuser.predict(rec, rng)
        else:
            lr, lc = fuser.predict_logits(rec, rng)
            pr, pc = int(lr > logit_cut), int(lc > logit_cut)
        truths.append((rec.label_request, rec.label_complaint))
        preds.append((pr, pc))
    return metrics_from_predictions(truths, preds)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_uar_request: float
    dev_uar_complaint: float
    dev_uar_mean: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "dev_uar_request": self.dev_uar_request,
            "dev_uar_complaint": self.dev_uar_complaint,
            "dev_uar_mean": self.dev_uar_mean,
        }


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_metrics: Metrics
    best_tensors: dict[str, np.ndarray]

    def history_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.history)


def _shuffled(n: int, rng: Rng) -> list[int]:
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.next_below(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def _param_norm_diagnostic(named_params) -> str:
    worst = sorted(
        ((float(np.abs(p.data).max()), name) for name, p in named_params), reverse=True
    )[:3]
    return ", ".join(f"{name} |max|={v:.3e}" for v, name in worst)


def train(
    fuser: Fuser,
    train_records: list[SampleRecord],
    dev_records: list[SampleRecord],
    cfg: TrainConfig,
    log=None,
) -> TrainResult:
    """Mini-batch training with per-epoch dev evaluation.

    Keeps the parameter snapshot with the best mean dev UAR (earliest epoch
    wins ties). Gradients are averaged over the batch; the shuffle and all
    token re-sampling derive from ``cfg.seed``.
    """
    if not train_records or not dev_records:
        raise ValueError("train and dev splits must both be nonempty")
    named = fuser.named_tensors()
    state = AdamState(named)
    history: list[EpochRecord] = []
    best_mean = -1.0
    best_epoch = -1
    best_metrics: Metrics | None = None
    best_tensors: dict[str, np.ndarray] = {name: p.data.copy() for name, p in named}

    for epoch in range(1, cfg.epochs + 1):
        order = _shuffled(len(train_records), Rng(mix_seed(cfg.seed, _SHUFFLE_TAG, epoch)))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_records[i] for i in order[start : start + cfg.batch_size]]
            for _, p in named:
                p.zero_grad()
            batch_loss = 0.0
            for rec in batch:
                rng = _sample_rng(cfg.seed, rec.id, epoch)
                loss = fuser.sample_loss(rec, rng, cfg.loss_weights)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch}, batch starting {start} "
                        f"(sample {rec.id!r}); {_param_norm_diagnostic(named)}"
                    )
                backward(loss, seed_grad=1.0 / len(batch))
                batch_loss += value
            adam_step(named, state, cfg)
            epoch_loss += batch_loss
        dev = evaluate(fuser, dev_records)
        rec_out = EpochRecord(
            epoch=epoch,
            train_loss=epoch_loss / len(train_records),
            dev_uar_request=dev.request.uar,
            dev_uar_complaint=dev.complaint.uar,
            dev_uar_mean=dev.mean_uar,
        )
        history.append(rec_out)
        if log is not None:
            log(rec_out)
        if dev.mean_uar > best_mean:
            best_mean = dev.mean_uar
            best_epoch = epoch
            best_metrics = dev
            best_tensors = {name: p.data.copy() for name, p in named}

    assert best_metrics is not None
    return TrainResult(history, best_epoch, best_metrics, best_tensors)


# ---------------------------------------------------------------------------
# Checkpoint glue
# ---------------------------------------------------------------------------


def save_fuser_checkpoint(
    path, fuser: Fuser, tensors: dict[str, np.ndarray], extra: dict | None = None
) -> None:
    config = {"fuser": fuser.spec.to_dict(), "d": fuser.d}
    if extra:
        config.update(extra)
    save_checkpoint(path, config, sorted(tensors.items()))


def load_fuser_checkpoint(path) -> tuple[Fuser, dict]:
    config, tensors = load_checkpoint(path)
    spec = FuserSpec.from_dict(config["fuser"])
    fuser = build_fuser(spec, config["d"], seed=0)
    apply_tensors(fuser, tensors)
    return fuser, config


def apply_tensors(fuser: Fuser, tensors: dict[str, np.ndarray]) -> None:
    named = dict(fuser.named_tensors())
    if set(named) != set(tensors):
        missing = sorted(set(named) - set(tensors))
        extra = sorted(set(tensors) - set(named))
        raise ValueError(f"checkpoint/param name mismatch: missing {missing}, unexpected {extra}")
    for name, p in named.items():
        arr = tensors[name]
        if arr.shape != p.data.shape:
            raise ValueError(f"tensor {name!r}: shape {arr.shape} != expected {p.data.shape}")
        p.data = arr.astype(p.data.dtype, copy=True)

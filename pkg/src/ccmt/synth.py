"""Seeded three-modality benchmark with planted cross-modal label signal.

Token recipe per sample (one splitmix64 stream per sample, seeded with
``dataset_seed XOR sample_index``, so generation is order-independent):

  1. true labels from the class priors, then modality token counts
  2. French text tokens: isotropic noise, plus — per token, per task with a
     positive label, with ``injection_prob`` — that (task, text) signal
     direction scaled by the task's French amplitude
  3. English text tokens: noise partially recycled from the French rows
     (token j blends French token j mod c_fr at ``translation_correlation``
     with fresh noise), fresh English-amplitude injections, plus
     translation noise N(0, 0.25 * sigma^2) — counts drawn independently
  4. audio tokens: same construction against the (task, audio) directions
  5. observed labels flip with ``label_flip_prob``

Signal directions (4: task x {text, audio}) are drawn once per dataset and
orthonormalized. Text sets get a class token equal to their token mean;
audio sets get none (the model attaches a learnable one).

The companion oracle trains a class-balanced ridge classifier on
mean-pooled features over a fresh Monte-Carlo draw and scores the dev
split: it certifies what any pooled unimodal model can reach, and the
pooled all-modality variant certifies the designed fusion gap recorded in
``dataset_meta.json``.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import Rng, mix_seed
from .storage import write_embedding_file
from .tensor import Tensor
from .tokens import Modality, SampleRecord, TokenSet

# Disjoint per-purpose stream tags (sample indices stay far below 2^33).
_DIRECTIONS_TAG = 0xD16EC7104 << 8
_ORACLE_INDEX_BASE = 1 << 33

TASKS = ("request", "complaint")
_TEXT_CHANNEL = {Modality.TEXT_FR: "text", Modality.TEXT_EN: "text", Modality.AUDIO: "audio"}

# Calibrated against the pooled-vs-unimodal oracle so the designed fusion
# property holds: the complaint task needs all three channels (pooled gap
# >= 0.05 over every unimodal ceiling), the request task is text-led with
# audio clearly weakest. Raising any single channel erases the gap.
DEFAULT_AMPLITUDES = {
    "request": {"text_fr": 0.85, "text_en": 0.75, "audio": 0.35},
    "complaint": {"audio": 0.40, "text_fr": 0.62, "text_en": 0.68},
}

DEFAULT_COUNT_RANGES = {
    "audio": (40, 120),
    "text_fr": (10, 60),
    "text_en": (10, 60),
}


@dataclass
class SynthConfig:
    n_train: int = 1000
    n_dev: int = 500
    dim: int = 32
    count_ranges: dict = field(default_factory=lambda: {k: v for k, v in DEFAULT_COUNT_RANGES.items()})
    noise_sigma: float = 1.0
    injection_prob: float = 0.3
    amplitudes: dict = field(default_factory=lambda: {t: dict(m) for t, m in DEFAULT_AMPLITUDES.items()})
    label_flip_prob: float = 0.05
    p_request: float = 0.5
    p_complaint: float = 0.35
    # how much of each English token's noise is recycled from its French
    # source token (the rest is fresh); 1.0 would make the text channels
    # nearly redundant and erase the designed fusion gap
    translation_correlation: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 1 or self.n_dev < 1:
            raise ValueError("n_train and n_dev must be positive")
        if self.dim < 4:
            raise ValueError("dim must be >= 4 (four orthonormal signal directions)")
        for prob, name in (
            (self.injection_prob, "injection_prob"),
            (self.label_flip_prob, "label_flip_prob"),
            (self.p_request, "p_request"),
            (self.p_complaint, "p_complaint"),
            (self.translation_correlation, "translation_correlation"),
        ):
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {prob}")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        for key, (lo, hi) in self.count_ranges.items():
            Modality(key)
            if lo < 1 or hi < lo:
                raise ValueError(f"count range for {key} must be nonempty and >= 1, got ({lo}, {hi})")
        for task, per_mod in self.amplitudes.items():
            if task not in TASKS:
                raise ValueError(f"unknown task {task!r} in amplitudes")
            for mod, amp in per_mod.items():
                Modality(mod)
                if amp < 0:
                    raise ValueError(f"amplitude for ({task}, {mod}) must be >= 0, got {amp}")

    def to_dict(self) -> dict:
        return {
            "n_train": self.n_train,
            "n_dev": self.n_dev,
            "dim": self.dim,
            "count_ranges": {k: list(v) for k, v in self.count_ranges.items()},
            "noise_sigma": self.noise_sigma,
            "injection_prob": self.injection_prob,
            "amplitudes": {t: dict(m) for t, m in self.amplitudes.items()},
            "label_flip_prob": self.label_flip_prob,
            "p_request": self.p_request,
            "p_complaint": self.p_complaint,
            "translation_correlation": self.translation_correlation,
            "seed": self.seed,
        }


def signal_directions(cfg: SynthConfig) -> dict[tuple[str, str], np.ndarray]:
    """Four orthonormal unit vectors, keyed by (task, channel)."""
    rng = Rng(cfg.seed ^ _DIRECTIONS_TAG)
    keys = [(task, channel) for task in TASKS for channel in ("text", "audio")]
    raw = rng.gaussian_array((len(keys), cfg.dim))
    basis: list[np.ndarray] = []
    for row in raw:
        v = row.copy()
        for b in basis:
            v -= (v @ b) * b
        norm = np.linalg.norm(v)
        if norm < 1e-9:
            raise ValueError("degenerate direction draw; choose another seed")
        basis.append(v / norm)
    return dict(zip(keys, basis))


def _amp(cfg: SynthConfig, task: str, modality: Modality) -> float:
    return float(cfg.amplitudes.get(task, {}).get(modality.value, 0.0))


def _inject(
    rng: Rng,
    tokens: np.ndarray,
    cfg: SynthConfig,
    modality: Modality,
    labels: dict[str, int],
    directions,
) -> None:
    """Per-token Bernoulli signal injections, in fixed task order."""
    channel = _TEXT_CHANNEL[modality]
    for task in TASKS:
        if not labels[task]:
            continue
        u = rng.fill_floats(tokens.shape[0])
        mask = u < cfg.injection_prob
        if mask.any():
            tokens[mask] += _amp(cfg, task, modality) * directions[(task, channel)]


def _with_class_token(tokens: np.ndarray) -> np.ndarray:
    return np.vstack([tokens.mean(axis=0, keepdims=True), tokens])


def generate_sample(cfg: SynthConfig, index: int, directions=None) -> SampleRecord:
    """Deterministically build the sample with the given global index.

    The per-sample stream seed chains (dataset_seed, index) through the
    splitmix finalizer twice rather than a bare XOR: structured index sets
    (counters, the oracle's offset block) stay measurably decorrelated,
    which the zero-signal chance-level guarantee depends on. Generation
    stays order-independent and embarrassingly parallel.
    """
    if directions is None:
        directions = signal_directions(cfg)
    rng = Rng(mix_seed(cfg.seed, index))
    y_r = int(rng.next_float() < cfg.p_request)
    y_c = int(rng.next_float() < cfg.p_complaint)
    labels = {"request": y_r, "complaint": y_c}

    counts = {}
    for key in ("text_fr", "text_en", "audio"):
        lo, hi = cfg.count_ranges[key]
        counts[key] = lo + rng.next_below(hi - lo + 1)

    fr_noise = rng.gaussian_array((counts["text_fr"], cfg.dim), cfg.noise_sigma)
    fr = fr_noise.copy()
    _inject(rng, fr, cfg, Modality.TEXT_FR, labels, directions)

    c_e = counts["text_en"]
    rho = cfg.translation_correlation
    recycled = fr_noise[np.arange(c_e) % counts["text_fr"]]
    fresh = rng.gaussian_array((c_e, cfg.dim), cfg.noise_sigma)
    en = rho * recycled + np.sqrt(1.0 - rho * rho) * fresh + rng.gaussian_array(
        (c_e, cfg.dim), 0.5 * cfg.noise_sigma
    )
    _inject(rng, en, cfg, Modality.TEXT_EN, labels, directions)

    audio = rng.gaussian_array((counts["audio"], cfg.dim), cfg.noise_sigma)
    _inject(rng, audio, cfg, Modality.AUDIO, labels, directions)

    obs_r = y_r ^ int(rng.next_float() < cfg.label_flip_prob)
    obs_c = y_c ^ int(rng.next_float() < cfg.label_flip_prob)

    split = "train" if index < cfg.n_train else "dev"
    name = f"{split}-{index:06d}" if index < _ORACLE_INDEX_BASE else f"mc-{index - _ORACLE_INDEX_BASE:06d}"
    sets = {
        Modality.TEXT_FR: TokenSet(Modality.TEXT_FR, Tensor(_with_class_token(fr).astype("float32")), True),
        Modality.TEXT_EN: TokenSet(Modality.TEXT_EN, Tensor(_with_class_token(en).astype("float32")), True),
        Modality.AUDIO: TokenSet(Modality.AUDIO, Tensor(audio.astype("float32")), False),
    }
    return SampleRecord(id=name, token_sets=sets, label_request=obs_r, label_complaint=obs_c)


def generate_records(cfg: SynthConfig, indices) -> list[SampleRecord]:
    directions = signal_directions(cfg)
    return [generate_sample(cfg, i, directions) for i in indices]


def dev_indices(cfg: SynthConfig) -> range:
    return range(cfg.n_train, cfg.n_train + cfg.n_dev)


# ---------------------------------------------------------------------------
# Pooled-feature ridge oracle
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    request: float
    complaint: float

    @property
    def mean(self) -> float:
        return 0.5 * (self.request + self.complaint)

    def to_dict(self) -> dict:
        return {"request": self.request, "complaint": self.complaint, "mean": self.mean}


def pooled_features(record: SampleRecord, modalities) -> np.ndarray:
    parts = [record.token_sets[m].tokens.data.mean(axis=0) for m in modalities]
    return np.concatenate(parts).astype("float64")


def _ridge_task_uar(
    x_train: np.ndarray, y_train: np.ndarray, x_dev: np.ndarray, y_dev: np.ndarray
) -> float:
    n_pos = int(y_train.sum())
    n_neg = len(y_train) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5  # degenerate training draw: no better than chance
    w = np.where(y_train == 1, 0.5 / n_pos, 0.5 / n_neg)
    mu = w @ x_train
    xc = x_train - mu
    gram = xc.T @ (w[:, None] * xc)
    lam = 1e-3 * np.trace(gram) / gram.shape[0] + 1e-12
    coef = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), xc.T @ (w * (2.0 * y_train - 1.0)))
    scores = (x_dev - mu) @ coef
    preds = (scores > 0).astype(int)
    pos = y_dev == 1
    if not pos.any() or pos.all():
        return 0.5
    recall_pos = float(preds[pos].mean())
    recall_neg = float(1.0 - preds[~pos].mean())
    return 0.5 * (recall_pos + recall_neg)


def oracle_uar(cfg: SynthConfig, modalities, n_mc: int = 2000) -> OracleResult:
    """UAR ceiling of a class-balanced linear model on mean-pooled features
    of the given modalities: trained on a fresh n_mc draw, scored on the
    dataset's dev split."""
    if n_mc < 1000:
        raise ValueError(f"n_mc must be >= 1000, got {n_mc}")
    modalities = [Modality(m) for m in modalities]
    directions = signal_directions(cfg)
    mc = [generate_sample(cfg, _ORACLE_INDEX_BASE + j, directions) for j in range(n_mc)]
    dev = [generate_sample(cfg, i, directions) for i in dev_indices(cfg)]
    x_train = np.stack([pooled_features(r, modalities) for r in mc])
    x_dev = np.stack([pooled_features(r, modalities) for r in dev])
    out = {}
    for task in TASKS:
        attr = "label_request" if task == "request" else "label_complaint"
        y_train = np.array([getattr(r, attr) for r in mc])
        y_dev = np.array([getattr(r, attr) for r in dev])
        out[task] = _ridge_task_uar(x_train, y_train, x_dev, y_dev)
    return OracleResult(**out)


def oracle_unimodal_uar(cfg: SynthConfig, modality, n_mc: int = 2000) -> OracleResult:
    return oracle_uar(cfg, [modality], n_mc)


# ---------------------------------------------------------------------------
# Dataset emission
# ---------------------------------------------------------------------------


def generate_dataset(
    cfg: SynthConfig,
    out_dir,
    compute_oracle: bool = True,
    oracle_samples: int = 2000,
) -> dict:
    """Write embeddings, manifest and metadata; return the metadata dict."""
    out = Path(out_dir)
    emb_dir = out / "embeddings"
    emb_dir.mkdir(parents=True, exist_ok=True)
    directions = signal_directions(cfg)
    manifest_lines = []
    for index in range(cfg.n_train + cfg.n_dev):
        rec = generate_sample(cfg, index, directions)
        rel = f"embeddings/{rec.id}.bin"
        write_embedding_file(out / rel, rec.token_sets)
        manifest_lines.append(
            json.dumps(
                {
                    "id": rec.id,
                    "embedding_file": rel,
                    "request": rec.label_request,
                    "complaint": rec.label_complaint,
                    "split": "train" if index < cfg.n_train else "dev",
                },
                sort_keys=True,
            )
        )
    (out / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")

    meta: dict = {"config": cfg.to_dict()}
    if compute_oracle:
        all_mods = (Modality.TEXT_FR, Modality.TEXT_EN, Modality.AUDIO)
        unimodal = {m.value: oracle_uar(cfg, [m], oracle_samples).to_dict() for m in all_mods}
        pooled = oracle_uar(cfg, all_mods, oracle_samples).to_dict()
        gap = pooled["complaint"] - max(u["complaint"] for u in unimodal.values())
        meta["oracle"] = {
            "n_mc": oracle_samples,
            "unimodal": unimodal,
            "pooled_all": pooled,
            "complaint_fusion_gap": gap,
            "fusion_gap_ok": gap >= 0.05,
        }
        if gap < 0.05 and any(
            amp > 0 for per_mod in cfg.amplitudes.values() for amp in per_mod.values()
        ):
            print(
                f"warning: pooled-vs-unimodal complaint gap {gap:.3f} is below the designed 0.05",
                file=sys.stderr,
            )
    (out / "dataset_meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return meta

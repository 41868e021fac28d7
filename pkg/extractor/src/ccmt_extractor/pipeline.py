"""Per-file extraction pipeline: transcribe, translate, encode, emit.

Each audio file becomes one embedding file holding the three modality
token sets, written atomically. Transcripts land in a sidecar JSON for
audit; labels come from an optional CSV (id,request,complaint,split) and
default to zero-label train placeholders otherwise. Per-file failures are
logged and skipped; any skip makes the job exit nonzero. Model loading
happens once up front, so an unresolvable model aborts before work starts.
"""

from __future__ import annotations

import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .audio import AudioReadError, read_wav
from .formats import ModalityTokens, manifest_line, write_embedding_atomic
from .models import (
    resolve_asr,
    resolve_audio_encoder,
    resolve_text_encoder,
    resolve_translator,
)

DEFAULT_MODELS = {
    "asr": "mock:asr",
    "translator": "mock:translate",
    "text_encoder_fr": "mock:text-encoder?dim=32",
    "text_encoder_en": "mock:text-encoder?dim=32&seed=1",
    "audio_encoder": "mock:audio-encoder?dim=32",
}


@dataclass
class ExtractionJob:
    input_dir: Path
    output_dir: Path
    asr_model: str = DEFAULT_MODELS["asr"]
    translation_model: str = DEFAULT_MODELS["translator"]
    text_encoder_fr: str = DEFAULT_MODELS["text_encoder_fr"]
    text_encoder_en: str = DEFAULT_MODELS["text_encoder_en"]
    audio_encoder: str = DEFAULT_MODELS["audio_encoder"]
    labels_csv: Path | None = None
    workers: int = 1

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        self.output_dir = Path(self.output_dir)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class ExtractionResult:
    processed: list[str] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (id, reason)
    manifest_path: Path | None = None
    sidecar_path: Path | None = None

    @property
    def ok(self) -> bool:
        return not self.skipped


def _load_labels(path: Path | None) -> dict[str, dict]:
    if path is None:
        return {}
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            labels[row["id"]] = {
                "request": int(row["request"]),
                "complaint": int(row["complaint"]),
                "split": row.get("split", "train"),
            }
    return labels


def extract(job: ExtractionJob, log=None) -> ExtractionResult:
    log = log or (lambda msg: print(msg, file=sys.stderr))
    wavs = sorted(job.input_dir.glob("*.wav"))
    if not wavs:
        raise FileNotFoundError(f"no .wav files under {job.input_dir}")

    # Resolve everything first: a bad model id aborts the whole job.
    asr = resolve_asr(job.asr_model)
    translator = resolve_translator(job.translation_model)
    enc_fr = resolve_text_encoder(job.text_encoder_fr)
    enc_en = resolve_text_encoder(job.text_encoder_en)
    enc_audio = resolve_audio_encoder(job.audio_encoder)

    labels = _load_labels(job.labels_csv)
    emb_dir = job.output_dir / "embeddings"
    emb_dir.mkdir(parents=True, exist_ok=True)

    def process(path: Path):
        sample_id = path.stem
        samples, rate = read_wav(path)
        transcript_fr = asr.transcribe(samples, rate)
        transcript_en = translator.translate(transcript_fr)
        fr_tokens, fr_cls = enc_fr.encode(transcript_fr)
        en_tokens, en_cls = enc_en.encode(transcript_en)
        audio_tokens = enc_audio.encode(samples, rate)
        rel = f"embeddings/{sample_id}.bin"
        write_embedding_atomic(
            job.output_dir / rel,
            [
                ModalityTokens("text_fr", fr_tokens, fr_cls),
                ModalityTokens("text_en", en_tokens, en_cls),
                ModalityTokens("audio", audio_tokens, False),
            ],
        )
        sidecar = {
            "id": sample_id,
            "transcript_fr": transcript_fr,
            "transcript_en": transcript_en,
            "empty_text": not transcript_fr,
            "dims": {
                "text_fr": int(fr_tokens.shape[1]),
                "text_en": int(en_tokens.shape[1]),
                "audio": int(audio_tokens.shape[1]),
            },
            "token_counts": {
                "text_fr": int(fr_tokens.shape[0]),
                "text_en": int(en_tokens.shape[0]),
                "audio": int(audio_tokens.shape[0]),
            },
        }
        lab = labels.get(sample_id, {"request": 0, "complaint": 0, "split": "train"})
        line = manifest_line(sample_id, rel, lab["request"], lab["complaint"], lab["split"])
        return sample_id, line, sidecar

    result = ExtractionResult()
    outcomes = []
    if job.workers == 1:
        iterator = map(_guarded(process, result, log), wavs)
        outcomes = [o for o in iterator if o is not None]
    else:
        with ThreadPoolExecutor(max_workers=job.workers) as pool:
            outcomes = [o for o in pool.map(_guarded(process, result, log), wavs) if o is not None]

    outcomes.sort(key=lambda o: o[0])  # deterministic manifest order
    manifest_path = job.output_dir / "manifest.jsonl"
    manifest_path.write_text("".join(line + "\n" for _, line, _ in outcomes), encoding="utf-8")
    sidecar_path = job.output_dir / "transcripts.json"
    sidecar_path.write_text(
        json.dumps([s for _, _, s in outcomes], indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    result.processed = [o[0] for o in outcomes]
    result.manifest_path = manifest_path
    result.sidecar_path = sidecar_path
    return result


def _guarded(fn, result: ExtractionResult, log):
    def wrapper(path: Path):
        try:
            return fn(path)
        except (AudioReadError, ValueError, OSError) as e:
            log(f"skipping {path.name}: {e}")
            result.skipped.append((path.stem, str(e)))
            return None

    return wrapper

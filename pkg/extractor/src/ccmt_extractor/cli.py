"""Command-line front end mirroring ExtractionJob."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .models import ModelResolutionError
from .pipeline import DEFAULT_MODELS, ExtractionJob, extract


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ccmt-extract",
        description="Transcribe, translate and encode audio into CCMT embedding files",
    )
    p.add_argument("--input", required=True, help="directory of .wav files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--asr", default=DEFAULT_MODELS["asr"])
    p.add_argument("--translator", default=DEFAULT_MODELS["translator"])
    p.add_argument("--text-encoder-fr", default=DEFAULT_MODELS["text_encoder_fr"])
    p.add_argument("--text-encoder-en", default=DEFAULT_MODELS["text_encoder_en"])
    p.add_argument("--audio-encoder", default=DEFAULT_MODELS["audio_encoder"])
    p.add_argument("--labels", default=None, help="CSV with id,request,complaint,split")
    p.add_argument("--workers", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExtractionJob(
        input_dir=Path(args.input),
        output_dir=Path(args.out),
        asr_model=args.asr,
        translation_model=args.translator,
        text_encoder_fr=args.text_encoder_fr,
        text_encoder_en=args.text_encoder_en,
        audio_encoder=args.audio_encoder,
        labels_csv=Path(args.labels) if args.labels else None,
        workers=args.workers,
    )
    try:
        result = extract(job)
    except (ModelResolutionError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    json.dump(
        {
            "processed": len(result.processed),
            "skipped": [{"id": sid, "reason": reason} for sid, reason in result.skipped],
            "manifest": str(result.manifest_path),
            "transcripts": str(result.sidecar_path),
        },
        sys.stdout,
        sort_keys=True,
    )
    sys.stdout.write("\n")
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())

"""Writers for the CCMT interchange surfaces.

This component talks to the classifier package purely over its published
formats, so the byte layout is implemented here independently:

    magic "CCMT", version u16=1, modality_count u16; per modality:
    name_len u8, ASCII name, has_class_token u8, token_count u32, dim u32,
    then token_count*dim float32 row-major; all little-endian.

Labels travel in a JSON-lines manifest with
{"id", "embedding_file", "request", "complaint", "split"} per line.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CCMT"
VERSION = 1


@dataclass
class ModalityTokens:
    name: str  # "text_fr" | "text_en" | "audio"
    tokens: np.ndarray  # count x dim float32
    has_class_token: bool

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float32)
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1 or self.tokens.shape[1] < 1:
            raise ValueError(f"{self.name}: token matrix must be at least 1x1, got {self.tokens.shape}")
        if not np.isfinite(self.tokens).all():
            raise ValueError(f"{self.name}: non-finite token values")
        self.name.encode("ascii")


def encode_embedding(modalities: list[ModalityTokens]) -> bytes:
    if not modalities:
        raise ValueError("need at least one modality")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", VERSION, len(modalities))
    for m in sorted(modalities, key=lambda m: m.name):
        name = m.name.encode("ascii")
        out += struct.pack("<B", len(name))
        out += name
        out += struct.pack("<BII", 1 if m.has_class_token else 0, m.tokens.shape[0], m.tokens.shape[1])
        out += np.ascontiguousarray(m.tokens, dtype="<f4").tobytes()
    return bytes(out)


def write_embedding_atomic(path, modalities: list[ModalityTokens]) -> None:
    """Write-temp-then-rename so readers never observe a partial file."""
    path = Path(path)
    payload = encode_embedding(modalities)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def manifest_line(sample_id: str, embedding_file: str, request: int, complaint: int, split: str) -> str:
    if request not in (0, 1) or complaint not in (0, 1):
        raise ValueError(f"{sample_id}: labels must be binary")
    if split not in ("train", "dev", "test"):
        raise ValueError(f"{sample_id}: bad split {split!r}")
    return json.dumps(
        {
            "id": sample_id,
            "embedding_file": embedding_file,
            "request": request,
            "complaint": complaint,
            "split": split,
        },
        sort_keys=True,
    )

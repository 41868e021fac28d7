"""On-disk interchange: binary embedding files and the JSON-lines manifest.

Embedding file layout (all little-endian):

    magic   4 bytes  b"CCMT"
    version u16      = 1
    count   u16      number of modalities
    per modality:
        name_len u8, name (ASCII), has_class_token u8,
        token_count u32, dim u32,
        token_count * dim float32, row-major

The format is a bit-exact contract shared with external token extractors:
read(write(x)) must reproduce x exactly. Modalities are written in sorted
name order so equal inputs always produce identical bytes.

The manifest is JSON-lines; each line holds
{"id", "embedding_file", "request", "complaint", "split"} with binary
labels and split in {train, dev, test}. Paths are resolved relative to the
manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor
from .tokens import Modality, SampleRecord, TokenSet

MAGIC = b"CCMT"
VERSION = 1
SPLITS = ("train", "dev", "test")


class EmbeddingFormatError(ValueError):
    """Malformed embedding file; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(ValueError):
    pass


def write_embedding_file(path, token_sets: dict[Modality, TokenSet]) -> None:
    if not token_sets:
        raise ValueError("write_embedding_file needs at least one modality")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", VERSION, len(token_sets))
    for modality in sorted(token_sets, key=lambda m: m.value):
        ts = token_sets[modality]
        name = modality.value.encode("ascii")
        data = np.ascontiguousarray(ts.tokens.data, dtype="<f4")
        out += struct.pack("<B", len(name))
        out += name
        out += struct.pack("<BII", 1 if ts.has_class_token else 0, ts.count, ts.dim)
        out += data.tobytes()
    Path(path).write_bytes(bytes(out))


def read_embedding_file(path) -> dict[Modality, TokenSet]:
    raw = Path(path).read_bytes()

    def need(n: int, offset: int, what: str) -> None:
        if offset + n > len(raw):
            raise EmbeddingFormatError(f"truncated file: expected {what}", offset)

    need(4, 0, "magic")
    if raw[:4] != MAGIC:
        raise EmbeddingFormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", 0)
    need(4, 4, "header")
    version, count = struct.unpack_from("<HH", raw, 4)
    if version != VERSION:
        raise EmbeddingFormatError(f"unsupported version {version}, expected {VERSION}", 4)
    offset = 8
    result: dict[Modality, TokenSet] = {}
    for _ in range(count):
        need(1, offset, "modality name length")
        (name_len,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        need(name_len, offset, "modality name")
        name = raw[offset : offset + name_len].decode("ascii")
        offset += name_len
        need(9, offset, "modality header")
        has_class, token_count, dim = struct.unpack_from("<BII", raw, offset)
        offset += 9
        payload = 4 * token_count * dim
        need(payload, offset, f"{token_count}x{dim} float32 payload")
        data = np.frombuffer(raw, dtype="<f4", count=token_count * dim, offset=offset)
        offset += payload
        try:
            modality = Modality(name)
        except ValueError:
            raise EmbeddingFormatError(f"unknown modality name {name!r}", offset - payload - 9 - name_len)
        if modality in result:
            raise EmbeddingFormatError(f"duplicate modality {name!r}", offset)
        result[modality] = TokenSet(
            modality,
            Tensor(data.reshape(token_count, dim).copy()),
            bool(has_class),
        )
    if offset != len(raw):
        raise EmbeddingFormatError(f"{len(raw) - offset} trailing bytes after payload", offset)
    if not result:
        raise EmbeddingFormatError("file declares zero modalities", 6)
    return result


@dataclass
class ManifestEntry:
    id: str
    embedding_file: Path
    request: int
    complaint: int
    split: str
    line_no: int


def load_manifest(path, split: str | None = None, check_files: bool = True) -> list[ManifestEntry]:
    """Parse and validate the manifest; optionally filter to one split."""
    path = Path(path)
    base = path.parent
    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    missing: list[tuple[int, str]] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}:{line_no}: malformed JSON: {e.msg}") from None
            if not isinstance(rec, dict):
                raise ManifestError(f"{path}:{line_no}: expected an object per line")
            for key in ("id", "embedding_file", "request", "complaint", "split"):
                if key not in rec:
                    raise ManifestError(f"{path}:{line_no}: missing key {key!r}")
            for task in ("request", "complaint"):
                v = rec[task]
                if isinstance(v, bool) or v not in (0, 1):
                    raise ManifestError(f"{path}:{line_no}: {task} label must be 0 or 1, got {v!r}")
            if rec["split"] not in SPLITS:
                raise ManifestError(f"{path}:{line_no}: split must be one of {SPLITS}, got {rec['split']!r}")
            sid = str(rec["id"])
            if sid in seen:
                raise ManifestError(f"{path}:{line_no}: duplicate id {sid!r} (first seen at line {seen[sid]})")
            seen[sid] = line_no
            emb = base / rec["embedding_file"]
            if check_files and not emb.is_file():
                missing.append((line_no, str(emb)))
            entries.append(ManifestEntry(sid, emb, int(rec["request"]), int(rec["complaint"]), rec["split"], line_no))
    if missing:
        detail = "; ".join(f"line {ln}: {p}" for ln, p in missing)
        raise ManifestError(f"{path}: {len(missing)} embedding file(s) missing: {detail}")
    if split is not None:
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}, expected one of {SPLITS}")
        entries = [e for e in entries if e.split == split]
    return entries


def load_records(entries: list[ManifestEntry]) -> list[SampleRecord]:
    """Materialize manifest entries into in-memory sample records."""
    records = []
    for e in entries:
        records.append(
            SampleRecord(
                id=e.id,
                token_sets=read_embedding_file(e.embedding_file),
                label_request=e.request,
                label_complaint=e.complaint,
            )
        )
    return records

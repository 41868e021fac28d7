"""Binary checkpoint format shared by every fuser.

Layout (little-endian):

    magic   4 bytes  b"CKPT"
    version u16      = 1
    cfg_len u32, cfg_len bytes of UTF-8 JSON (fuser spec + run metadata)
    count   u32      tensor count
    per tensor:
        name_len u16, UTF-8 name, rank u8, rank * u32 dims, float32 data

Round-trips are bit-exact; the config JSON is emitted with sorted keys so
equal state always serializes to identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CKPT"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path, config: dict, tensors: list[tuple[str, np.ndarray]]) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    cfg_bytes = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out += struct.pack("<I", len(cfg_bytes))
    out += cfg_bytes
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        name_b = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")  # keeps 0-d shape, unlike ascontiguousarray
        out += struct.pack("<H", len(name_b))
        out += name_b
        out += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        out += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()

    def need(n: int, offset: int, what: str) -> None:
        if offset + n > len(raw):
            raise CheckpointFormatError(f"truncated checkpoint: expected {what} at byte {offset}")

    need(4, 0, "magic")
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    need(2, 4, "version")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    need(4, 6, "config length")
    (cfg_len,) = struct.unpack_from("<I", raw, 6)
    offset = 10
    need(cfg_len, offset, "config JSON")
    config = json.loads(raw[offset : offset + cfg_len].decode("utf-8"))
    offset += cfg_len
    need(4, offset, "tensor count")
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        need(2, offset, "tensor name length")
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        need(name_len, offset, "tensor name")
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        need(1, offset, "tensor rank")
        (rank,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        need(4 * rank, offset, "tensor dims")
        dims = struct.unpack_from(f"<{rank}I", raw, offset) if rank else ()
        offset += 4 * rank
        size = int(np.prod(dims)) if dims else 1
        need(4 * size, offset, "tensor payload")
        data = np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(dims).copy()
        offset += 4 * size
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor name {name!r}")
        tensors[name] = data
    if offset != len(raw):
        raise CheckpointFormatError(f"{len(raw) - offset} trailing bytes after last tensor")
    return config, tensors

"""Binary embedding format and manifest validation."""

import json

import numpy as np
import pytest

from ccmt.rng import Rng
from ccmt.storage import (
    EmbeddingFormatError,
    ManifestError,
    load_manifest,
    load_records,
    read_embedding_file,
    write_embedding_file,
)
from ccmt.tensor import Tensor
from ccmt.tokens import Modality, TokenSet


def random_sets(seed=0, dim=6):
    rng = Rng(seed)
    return {
        Modality.TEXT_FR: TokenSet(
            Modality.TEXT_FR, Tensor(rng.gaussian_array((4, dim)).astype(np.float32)), True
        ),
        Modality.TEXT_EN: TokenSet(
            Modality.TEXT_EN, Tensor(rng.gaussian_array((3, dim)).astype(np.float32)), True
        ),
        Modality.AUDIO: TokenSet(
            Modality.AUDIO, Tensor(rng.gaussian_array((7, dim)).astype(np.float32)), False
        ),
    }


class TestEmbeddingFile:
    def test_round_trip_bit_exact(self, tmp_path):
        sets = random_sets()
        path = tmp_path / "sample.bin"
        write_embedding_file(path, sets)
        loaded = read_embedding_file(path)
        assert set(loaded) == set(sets)
        for m, ts in sets.items():
            assert loaded[m].has_class_token == ts.has_class_token
            assert loaded[m].tokens.data.tobytes() == ts.tokens.data.tobytes()

    def test_write_is_deterministic(self, tmp_path):
        sets = random_sets()
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        write_embedding_file(a, sets)
        write_embedding_file(b, sets)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_modality_map_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="at least one"):
            write_embedding_file(tmp_path / "x.bin", {})

    def test_file_size_formula(self, tmp_path):
        sets = random_sets()
        path = tmp_path / "s.bin"
        write_embedding_file(path, sets)
        expected = 8 + sum(
            1 + len(m.value) + 1 + 8 + 4 * ts.count * ts.dim for m, ts in sets.items()
        )
        assert path.stat().st_size == expected

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(EmbeddingFormatError, match="magic"):
            read_embedding_file(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "v.bin"
        path.write_bytes(b"CCMT\x09\x00\x01\x00")
        with pytest.raises(EmbeddingFormatError, match="version"):
            read_embedding_file(path)

    def test_truncation_reports_offset(self, tmp_path):
        sets = random_sets()
        full = tmp_path / "full.bin"
        write_embedding_file(full, sets)
        data = full.read_bytes()
        cut = tmp_path / "cut.bin"
        cut.write_bytes(data[: len(data) - 5])
        with pytest.raises(EmbeddingFormatError, match="byte offset") as exc:
            read_embedding_file(cut)
        assert exc.value.offset is not None

    def test_trailing_garbage_rejected(self, tmp_path):
        sets = random_sets()
        path = tmp_path / "t.bin"
        write_embedding_file(path, sets)
        path.write_bytes(path.read_bytes() + b"zz")
        with pytest.raises(EmbeddingFormatError, match="trailing"):
            read_embedding_file(path)


def write_manifest(tmp_path, lines, name="manifest.jsonl"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def valid_line(tmp_path, sid, split="train", request=1, complaint=0):
    emb = tmp_path / f"{sid}.bin"
    write_embedding_file(emb, random_sets())
    return json.dumps(
        {"id": sid, "embedding_file": f"{sid}.bin", "request": request, "complaint": complaint, "split": split}
    )


class TestManifest:
    def test_two_valid_lines(self, tmp_path):
        path = write_manifest(tmp_path, [valid_line(tmp_path, "a"), valid_line(tmp_path, "b", split="dev")])
        entries = load_manifest(path)
        assert [e.id for e in entries] == ["a", "b"]
        assert load_manifest(path, split="dev")[0].id == "b"
        records = load_records(load_manifest(path))
        assert len(records) == 2 and records[0].label_request == 1

    def test_non_binary_label_rejected(self, tmp_path):
        bad = json.dumps({"id": "x", "embedding_file": "x.bin", "request": 2, "complaint": 0, "split": "train"})
        path = write_manifest(tmp_path, [bad])
        with pytest.raises(ManifestError, match="request label"):
            load_manifest(path)

    def test_duplicate_id_cites_both_lines(self, tmp_path):
        l1 = valid_line(tmp_path, "dup")
        path = write_manifest(tmp_path, [l1, l1])
        with pytest.raises(ManifestError, match=r"line 1"):
            load_manifest(path)
        with pytest.raises(ManifestError, match=r":2:"):
            load_manifest(path)

    def test_missing_embedding_file_cites_line(self, tmp_path):
        line = json.dumps({"id": "gone", "embedding_file": "gone.bin", "request": 0, "complaint": 0, "split": "train"})
        path = write_manifest(tmp_path, [valid_line(tmp_path, "ok"), line])
        with pytest.raises(ManifestError, match="line 2"):
            load_manifest(path)

    def test_malformed_json_cites_line(self, tmp_path):
        path = write_manifest(tmp_path, [valid_line(tmp_path, "ok"), "{not json"])
        with pytest.raises(ManifestError, match=":2: malformed"):
            load_manifest(path)

    def test_bad_split_rejected(self, tmp_path):
        line = valid_line(tmp_path, "s").replace('"train"', '"validation"')
        path = write_manifest(tmp_path, [line])
        with pytest.raises(ManifestError, match="split"):
            load_manifest(path)

    def test_bool_label_rejected(self, tmp_path):
        line = json.dumps({"id": "b", "embedding_file": "b.bin", "request": True, "complaint": 0, "split": "train"})
        path = write_manifest(tmp_path, [line])
        with pytest.raises(ManifestError, match="label"):
            load_manifest(path)

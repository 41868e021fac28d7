import numpy as np
import pytest

from ccmt_extractor.audio import AudioReadError, read_wav, write_wav


def test_round_trip_mono(tmp_path):
    rng = np.random.default_rng(0)
    samples = (0.5 * np.sin(np.linspace(0, 40 * np.pi, 8000)) + 0.05 * rng.normal(size=8000)).astype(np.float32)
    path = tmp_path / "t.wav"
    write_wav(path, samples, 16000)
    loaded, rate = read_wav(path)
    assert rate == 16000
    assert loaded.shape == samples.shape
    np.testing.assert_allclose(loaded, np.clip(samples, -1, 1), atol=2.0 / 32768)


def test_stereo_folds_to_mono(tmp_path):
    import wave

    left = np.full(100, 0.5)
    right = np.full(100, -0.5)
    inter = np.empty(200, dtype=np.float64)
    inter[0::2], inter[1::2] = left, right
    pcm = (inter * 32767).astype("<i2")
    path = tmp_path / "s.wav"
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(8000)
        wf.writeframes(pcm.tobytes())
    samples, _ = read_wav(path)
    assert samples.shape == (100,)
    np.testing.assert_allclose(samples, 0.0, atol=1e-4)


def test_garbage_file_raises(tmp_path):
    path = tmp_path / "x.wav"
    path.write_bytes(b"not a wav at all")
    with pytest.raises(AudioReadError):
        read_wav(path)

"""WAV loading: stdlib-only, 16/32-bit PCM, stereo folded to mono."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np


class AudioReadError(ValueError):
    pass


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return (samples in [-1, 1] as float32, sample_rate)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            frames = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError, OSError) as e:
        raise AudioReadError(f"{path}: cannot read WAV: {e}") from None
    if width == 2:
        data = np.frombuffer(frames, dtype="<i2").astype(np.float32) / 32768.0
    elif width == 4:
        data = np.frombuffer(frames, dtype="<i4").astype(np.float32) / 2147483648.0
    elif width == 1:
        data = (np.frombuffer(frames, dtype=np.uint8).astype(np.float32) - 128.0) / 128.0
    else:
        raise AudioReadError(f"{path}: unsupported sample width {width}")
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    if data.size == 0:
        raise AudioReadError(f"{path}: empty audio stream")
    return data, rate


def write_wav(path, samples: np.ndarray, rate: int) -> None:
    """Test helper: write mono float samples as 16-bit PCM."""
    pcm = np.clip(samples, -1.0, 1.0)
    pcm = (pcm * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(pcm.tobytes())

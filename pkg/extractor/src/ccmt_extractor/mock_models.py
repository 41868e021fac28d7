"""Deterministic offline model providers.

These stand in for real ASR/translation/encoder checkpoints in tests and
smoke runs: no network, no weights, bit-reproducible outputs. The pseudo
transcripts segment the waveform on energy, name each voiced window by a
feature hash into a small French-ish vocabulary, and the encoders embed
words (or audio frames) through seeded hash-derived Gaussian vectors.
"""

from __future__ import annotations

import numpy as np

from .models import AsrModel, AudioEncoder, TextEncoder, TranslationModel

_MASK64 = (1 << 64) - 1

_VOCAB_FR = [
    "bonjour", "madame", "monsieur", "demande", "probleme", "facture",
    "merci", "service", "attente", "reclamation", "dossier", "rappel",
    "paiement", "rendezvous", "annuler", "confirmer",
]

_FR_TO_EN = {
    "bonjour": "hello", "madame": "madam", "monsieur": "sir",
    "demande": "request", "probleme": "problem", "facture": "invoice",
    "merci": "thanks", "service": "service", "attente": "waiting",
    "reclamation": "complaint", "dossier": "file", "rappel": "callback",
    "paiement": "payment", "rendezvous": "appointment", "annuler": "cancel",
    "confirmer": "confirm",
}


def _mix64(x: int) -> int:
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def _hash_text(s: str) -> int:
    h = 0xCBF29CE484222325
    for b in s.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def _seeded_vector(seed: int, dim: int) -> np.ndarray:
    """Deterministic unit-variance vector from one 64-bit seed."""
    state = seed & _MASK64
    out = np.empty(dim, dtype=np.float64)
    vals = []
    while len(vals) < 2 * dim:
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        vals.append(_mix64(state))
    u = (np.array(vals, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    u1, u2 = u[0::2], u[1::2]
    out = np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)
    return out[:dim].astype(np.float32)


class MockAsr(AsrModel):
    """Energy-gated windowing; each voiced window becomes a vocabulary word."""

    def __init__(self, seed: int = 0, window_ms: int = 250, threshold: float = 0.01):
        self.seed = seed
        self.window_ms = window_ms
        self.threshold = threshold

    def transcribe(self, samples: np.ndarray, sample_rate: int) -> str:
        win = max(1, int(sample_rate * self.window_ms / 1000))
        words = []
        for start in range(0, len(samples), win):
            chunk = samples[start : start + win]
            rms = float(np.sqrt(np.mean(chunk**2)))
            if rms < self.threshold:
                continue  # silence
            zcr = int(np.sum(np.abs(np.diff(np.sign(chunk)))) // 2)
            fingerprint = _mix64(self.seed ^ (int(rms * 1e6) * 1315423911) ^ (zcr * 2654435761))
            words.append(_VOCAB_FR[fingerprint % len(_VOCAB_FR)])
        return " ".join(words)


class MockTranslator(TranslationModel):
    """Word-for-word dictionary lookup; unknown words pass through marked."""

    def translate(self, text: str) -> str:
        return " ".join(_FR_TO_EN.get(w, f"en_{w}") for w in text.split())


class MockTextEncoder(TextEncoder):
    """One hash-derived embedding per word plus a mean class token at row 0.

    An empty transcript yields a single all-zero token (no class token);
    the pipeline records the empty_text flag in the sidecar when this
    fallback fires.
    """

    def __init__(self, dim: int = 32, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def encode(self, text: str) -> tuple[np.ndarray, bool]:
        words = text.split()
        if not words:
            return np.zeros((1, self.dim), dtype=np.float32), False
        rows = np.stack(
            [_seeded_vector(_hash_text(w) ^ self.seed, self.dim) for w in words]
        )
        cls = rows.mean(axis=0, keepdims=True)
        return np.vstack([cls, rows]).astype(np.float32), True


class MockAudioEncoder(AudioEncoder):
    """Frame-level spectral summaries projected to the embedding width."""

    def __init__(self, dim: int = 32, seed: int = 0, frame_ms: int = 100, bands: int = 8):
        self.dim = dim
        self.seed = seed
        self.frame_ms = frame_ms
        self.bands = bands
        proj_rows = [_seeded_vector(_mix64(seed ^ (0xA0D10 + i)), dim) for i in range(bands + 2)]
        self._proj = np.stack(proj_rows)  # (bands+2) x dim

    def encode(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        frame = max(8, int(sample_rate * self.frame_ms / 1000))
        tokens = []
        for start in range(0, len(samples), frame):
            chunk = samples[start : start + frame]
            if len(chunk) < 8:
                break
            spectrum = np.abs(np.fft.rfft(chunk))
            edges = np.linspace(0, len(spectrum), self.bands + 1, dtype=int)
            band_energy = np.array(
                [spectrum[a:b].mean() if b > a else 0.0 for a, b in zip(edges[:-1], edges[1:])]
            )
            rms = float(np.sqrt(np.mean(chunk**2)))
            zcr = float(np.sum(np.abs(np.diff(np.sign(chunk)))) / (2.0 * len(chunk)))
            feats = np.concatenate([band_energy, [rms, zcr]])
            tokens.append(feats @ self._proj)
        if not tokens:
            tokens = [np.zeros(self.dim)]
        return np.stack(tokens).astype(np.float32)

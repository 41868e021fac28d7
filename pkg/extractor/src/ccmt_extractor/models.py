"""Model provider interfaces and the id-string registry.

Which concrete checkpoints to run is configuration, not code: a model id
like ``mock:text-encoder?dim=32`` or ``hf:openai/whisper-small`` selects a
provider family and its settings. The ``mock:`` family is deterministic,
dependency-free and always resolvable (used by tests and smoke runs); the
``hf:`` family wraps Hugging Face checkpoints and requires the optional
``transformers``/``torch`` extras plus downloaded weights.
"""

from __future__ import annotations

from urllib.parse import parse_qs

import numpy as np


class ModelResolutionError(RuntimeError):
    """Provider family unknown or backing dependencies unavailable."""


class AsrModel:
    def transcribe(self, samples: np.ndarray, sample_rate: int) -> str:
        raise NotImplementedError


class TranslationModel:
    def translate(self, text: str) -> str:
        raise NotImplementedError


class TextEncoder:
    dim: int

    def encode(self, text: str) -> tuple[np.ndarray, bool]:
        """Return (tokens count x dim, has_class_token)."""
        raise NotImplementedError


class AudioEncoder:
    dim: int

    def encode(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        """Return acoustic tokens, count x dim (no class token)."""
        raise NotImplementedError


def _parse(model_id: str) -> tuple[str, str, dict]:
    if ":" not in model_id:
        raise ModelResolutionError(f"model id {model_id!r} needs a family prefix like 'mock:' or 'hf:'")
    family, rest = model_id.split(":", 1)
    path, _, query = rest.partition("?")
    params = {k: v[-1] for k, v in parse_qs(query).items()}
    return family, path, params


def resolve_asr(model_id: str) -> AsrModel:
    family, name, params = _parse(model_id)
    if family == "mock":
        from .mock_models import MockAsr

        return MockAsr(seed=int(params.get("seed", 0)))
    if family == "hf":
        from .hf_models import HfAsr

        return HfAsr(name, **params)
    raise ModelResolutionError(f"unknown ASR family {family!r} in {model_id!r}")


def resolve_translator(model_id: str) -> TranslationModel:
    family, name, params = _parse(model_id)
    if family == "mock":
        from .mock_models import MockTranslator

        return MockTranslator()
    if family == "hf":
        from .hf_models import HfTranslator

        return HfTranslator(name, **params)
    raise ModelResolutionError(f"unknown translation family {family!r} in {model_id!r}")


def resolve_text_encoder(model_id: str) -> TextEncoder:
    family, name, params = _parse(model_id)
    if family == "mock":
        from .mock_models import MockTextEncoder

        return MockTextEncoder(dim=int(params.get("dim", 32)), seed=int(params.get("seed", 0)))
    if family == "hf":
        from .hf_models import HfTextEncoder

        return HfTextEncoder(name, **params)
    raise ModelResolutionError(f"unknown text-encoder family {family!r} in {model_id!r}")


def resolve_audio_encoder(model_id: str) -> AudioEncoder:
    family, name, params = _parse(model_id)
    if family == "mock":
        from .mock_models import MockAudioEncoder

        return MockAudioEncoder(dim=int(params.get("dim", 32)), seed=int(params.get("seed", 0)))
    if family == "hf":
        from .hf_models import HfAudioEncoder

        return HfAudioEncoder(name, **params)
    raise ModelResolutionError(f"unknown audio-encoder family {family!r} in {model_id!r}")

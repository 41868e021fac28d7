"""Hugging Face-backed providers (optional extra).

Imports are deferred so the package works without torch/transformers; a
missing dependency or checkpoint surfaces as ModelResolutionError naming
the model id, which aborts the job before any file is processed.
"""

from __future__ import annotations

import numpy as np

from .models import AsrModel, AudioEncoder, ModelResolutionError, TextEncoder, TranslationModel


def _import_transformers(model_id: str):
    try:
        import torch  # noqa: F401
        import transformers

        return transformers
    except ImportError as e:
        raise ModelResolutionError(
            f"model {model_id!r} needs the 'hf' extra (pip install ccmt-extractor[hf]): {e}"
        ) from None


class HfAsr(AsrModel):
    def __init__(self, name: str, language: str = "fr", chunk_s: float = 30.0, **_):
        tf = _import_transformers(f"hf:{name}")
        try:
            self._pipe = tf.pipeline(
                "automatic-speech-recognition", model=name, chunk_length_s=float(chunk_s)
            )
        except Exception as e:
            raise ModelResolutionError(f"cannot load ASR model hf:{name}: {e}") from None
        self._language = language

    def transcribe(self, samples: np.ndarray, sample_rate: int) -> str:
        result = self._pipe(
            {"array": np.asarray(samples, dtype=np.float32), "sampling_rate": sample_rate},
            generate_kwargs={"language": self._language},
        )
        return result["text"].strip()


class HfTranslator(TranslationModel):
    def __init__(self, name: str, source: str = "fr", target: str = "en", **_):
        tf = _import_transformers(f"hf:{name}")
        try:
            self._pipe = tf.pipeline("translation", model=name, src_lang=source, tgt_lang=target)
        except Exception as e:
            raise ModelResolutionError(f"cannot load translation model hf:{name}: {e}") from None

    def translate(self, text: str) -> str:
        if not text:
            return ""
        return self._pipe(text)[0]["translation_text"].strip()


class HfTextEncoder(TextEncoder):
    def __init__(self, name: str, **_):
        tf = _import_transformers(f"hf:{name}")
        try:
            self._tokenizer = tf.AutoTokenizer.from_pretrained(name)
            self._model = tf.AutoModel.from_pretrained(name)
        except Exception as e:
            raise ModelResolutionError(f"cannot load text encoder hf:{name}: {e}") from None
        self.dim = int(self._model.config.hidden_size)

    def encode(self, text: str) -> tuple[np.ndarray, bool]:
        import torch

        if not text:
            return np.zeros((1, self.dim), dtype=np.float32), False
        with torch.no_grad():
            batch = self._tokenizer(text, return_tensors="pt", truncation=True)
            hidden = self._model(**batch).last_hidden_state[0].cpu().numpy()
        # row 0 is the encoder's own class token
        return hidden.astype(np.float32), True


class HfAudioEncoder(AudioEncoder):
    def __init__(self, name: str, **_):
        tf = _import_transformers(f"hf:{name}")
        try:
            self._extractor = tf.AutoFeatureExtractor.from_pretrained(name)
            self._model = tf.AutoModel.from_pretrained(name)
        except Exception as e:
            raise ModelResolutionError(f"cannot load audio encoder hf:{name}: {e}") from None
        self.dim = int(self._model.config.hidden_size)

    def encode(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        import torch

        with torch.no_grad():
            batch = self._extractor(
                np.asarray(samples, dtype=np.float32), sampling_rate=sample_rate, return_tensors="pt"
            )
            hidden = self._model(**batch).last_hidden_state[0].cpu().numpy()
        return hidden.astype(np.float32)

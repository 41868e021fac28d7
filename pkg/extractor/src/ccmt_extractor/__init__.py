"""Audio-to-embeddings extraction front end.

Reproduces the upstream half of the request/complaint pipeline: ASR over
phone-call audio, translation into a second text modality, pretrained (or
deterministic mock) encoders, and emission of token embeddings in the CCMT
binary interchange format plus a JSON-lines manifest. The classifier side
consumes these files without any code dependency on this package.
"""

from .formats import ModalityTokens, encode_embedding, write_embedding_atomic
from .models import (
    ModelResolutionError,
    resolve_asr,
    resolve_audio_encoder,
    resolve_text_encoder,
    resolve_translator,
)
from .pipeline import ExtractionJob, ExtractionResult, extract

__all__ = [
    "ExtractionJob",
    "ExtractionResult",
    "ModalityTokens",
    "ModelResolutionError",
    "encode_embedding",
    "extract",
    "resolve_asr",
    "resolve_audio_encoder",
    "resolve_text_encoder",
    "resolve_translator",
    "write_embedding_atomic",
]

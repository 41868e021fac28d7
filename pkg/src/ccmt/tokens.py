"""Modality token sets and the token-count uniformization procedure.

The fusion model needs every modality to contribute exactly k rows. Down-
sampling keeps the class token (row 0) and picks the remaining rows without
replacement via a partial Fisher-Yates shuffle; up-sampling appends
duplicates of uniformly drawn non-class rows. Both are driven by the pinned
splitmix64 stream, so equal seeds give bit-identical selections everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .rng import Rng
from .tensor import Tensor, concat, gather_rows, reshape


class Modality(str, Enum):
    TEXT_FR = "text_fr"
    TEXT_EN = "text_en"
    TEXT_OTHER = "text_other"
    AUDIO = "audio"


MODALITY_NAMES = tuple(m.value for m in Modality)


def parse_modality(name: str) -> Modality:
    aliases = {"fr": Modality.TEXT_FR, "en": Modality.TEXT_EN, "other": Modality.TEXT_OTHER}
    if name in aliases:
        return aliases[name]
    try:
        return Modality(name)
    except ValueError:
        raise ValueError(f"unknown modality {name!r}; expected one of {MODALITY_NAMES}") from None


@dataclass
class TokenSet:
    """One modality's token matrix (count x dim), class token at row 0 if any."""

    modality: Modality
    tokens: Tensor
    has_class_token: bool = False

    def __post_init__(self):
        if self.tokens.data.ndim != 2:
            raise ValueError(f"tokens must be a matrix, got shape {self.tokens.data.shape}")
        count, dim = self.tokens.data.shape
        if count < 1 or dim < 1:
            raise ValueError(f"token matrix must be at least 1x1, got {count}x{dim}")
        if not np.isfinite(self.tokens.data).all():
            raise ValueError("token matrix contains non-finite values")

    @property
    def count(self) -> int:
        return self.tokens.data.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.data.shape[1]


@dataclass
class SampleRecord:
    """One labeled sample: per-modality token sets plus the two binary labels."""

    id: str
    token_sets: dict[Modality, TokenSet] = field(default_factory=dict)
    label_request: int = 0
    label_complaint: int = 0

    def __post_init__(self):
        if self.label_request not in (0, 1) or self.label_complaint not in (0, 1):
            raise ValueError(f"labels must be binary, got {self.label_request}/{self.label_complaint}")
        dims = {ts.dim for ts in self.token_sets.values()}
        if len(dims) > 1:
            raise ValueError(f"token sets disagree on dim: {sorted(dims)}")


def uniformize_indices(count: int, k: int, has_class_token: bool, rng: Rng) -> list[int]:
    """Row indices implementing the k-token uniformity rule.

    count > k: class row kept, the rest chosen without replacement by a
    partial Fisher-Yates pass over the non-class rows (swap target drawn as
    ``i + next_u64() % remaining``). count < k: duplicate indices drawn
    uniformly (``next_u64() % n_source``) from the non-class rows; a set
    holding only a class token duplicates the class token body. count == k:
    identity.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if count == k:
        return list(range(count))
    protected = 1 if has_class_token else 0
    if count > k:
        n = count - protected
        m = k - protected
        pool = list(range(n))
        for i in range(m):
            j = i + rng.next_below(n - i)  # always draws, even when forced
            pool[i], pool[j] = pool[j], pool[i]
        return list(range(protected)) + [protected + p for p in pool[:m]]
    # count < k: append duplicates of existing non-class rows
    n_source = count - protected
    if n_source == 0:
        source_base, n_source = 0, 1  # class-token-only set: duplicate its body
    else:
        source_base = protected
    indices = list(range(count))
    for _ in range(k - count):
        indices.append(source_base + rng.next_below(n_source))
    return indices


def uniformize(ts: TokenSet, k: int, rng: Rng) -> TokenSet:
    """Resample/duplicate rows so the set has exactly k of them.

    The class token, when present, stays at row 0. Identity when the count
    already matches. Gradients flow through the row selection, so trainable
    rows (the attached audio class token) receive their share of the
    backward signal even when duplicated.
    """
    if ts.count == k:
        return ts
    indices = uniformize_indices(ts.count, k, ts.has_class_token, rng)
    return TokenSet(ts.modality, gather_rows(ts.tokens, indices), ts.has_class_token)


def prepend_class_token(ts: TokenSet, class_vec: Tensor) -> TokenSet:
    """Attach a class token as the new row 0 of a set that lacks one."""
    if ts.has_class_token:
        raise ValueError(f"{ts.modality.value} token set already has a class token")
    if class_vec.data.ndim == 1:
        row = reshape(class_vec, (1, class_vec.data.shape[0]))
    elif class_vec.data.ndim == 2 and class_vec.data.shape[0] == 1:
        row = class_vec
    else:
        raise ValueError(f"class vector must be 1 x dim, got shape {class_vec.data.shape}")
    if row.data.shape[1] != ts.dim:
        raise ValueError(f"class vector dim {row.data.shape[1]} != token dim {ts.dim}")
    return TokenSet(ts.modality, concat([row, ts.tokens], axis=0), True)

"""Adapter configuration."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Pooling(enum.Enum):
    LAST_TOKEN = "last-token"
    MEAN = "mean"


@dataclass(frozen=True)
class AdapterConfig:
    """Settings for one served encoder.

    ``model_id`` selects the encoder: ``hashing`` (default, scikit-learn
    character-n-gram hashing, no weights needed) or a transformers model path
    for locally available weights.  ``dim`` is advertised to clients and must
    equal what the encoder emits.  ``max_tokens`` truncates each item in
    whitespace units before encoding; ``max_item_chars`` is the hard request
    limit (HTTP 413 beyond it).
    """

    model_id: str = "hashing"
    pooling: Pooling = Pooling.LAST_TOKEN
    dim: int = 384
    max_tokens: int = 256
    device: str = "cpu"
    max_item_chars: int = 1_000_000

    def __post_init__(self):
        if self.dim < 8:
            raise ValueError(f"dim must be >= 8, got {self.dim}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

"""Encoders behind the wire protocol.

The default is a scikit-learn character-n-gram hashing encoder: stateless,
deterministic, fixed-dimension, and good enough for lexical code/text
retrieval without any downloaded weights.  ``TransformerEncoder`` wraps a
local ``transformers`` checkpoint with last-token ("EOS") or mean pooling
for environments that have one; both paths l2-normalize their output.

Encoders are text-only: image fields in requests are accepted and ignored.
"""

from __future__ import annotations

import re

import numpy as np

from .config import AdapterConfig, Pooling

_UNIT_RE = re.compile(r"\S+")


class ModelError(Exception):
    """Wraps encoder failures so the server can answer HTTP 500."""


def truncate_units(text: str, budget: int) -> str:
    seen = 0
    for m in _UNIT_RE.finditer(text):
        seen += 1
        if seen == budget:
            return text[: m.end()]
    return text


class HashingTextEncoder:
    """Character 3-5-gram hashing via scikit-learn, l2-normalized."""

    def __init__(self, cfg: AdapterConfig):
        from sklearn.feature_extraction.text import HashingVectorizer

        self.cfg = cfg
        self._vectorizer = HashingVectorizer(
            analyzer="char_wb",
            ngram_range=(3, 5),
            n_features=cfg.dim,
            norm="l2",
            alternate_sign=True,
            lowercase=False,
        )

    def encode(self, texts: list[str]) -> np.ndarray:
        clipped = [truncate_units(t, self.cfg.max_tokens) for t in texts]
        try:
            matrix = self._vectorizer.transform(clipped).toarray().astype(np.float64)
        except Exception as exc:  # pragma: no cover - sklearn internal failure
            raise ModelError(str(exc)) from exc
        # An all-empty item hashes to a zero row; give it a fixed direction so
        # the protocol's unit-norm contract holds for every row.
        for i, row in enumerate(matrix):
            norm = np.linalg.norm(row)
            if norm == 0.0:
                matrix[i, 0] = 1.0
            else:
                matrix[i] = row / norm
        return matrix


class TransformerEncoder:
    """Local transformers checkpoint with last-token or mean pooling."""

    def __init__(self, cfg: AdapterConfig):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - optional extra
            raise ModelError(f"transformers backend unavailable: {exc}") from exc
        self.cfg = cfg
        self.torch = torch
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(cfg.model_id)
            self.model = AutoModel.from_pretrained(cfg.model_id).to(cfg.device).eval()
        except Exception as exc:
            raise ModelError(f"cannot load model {cfg.model_id!r}: {exc}") from exc

    def encode(self, texts: list[str]) -> np.ndarray:
        torch = self.torch
        try:
            with torch.no_grad():
                batch = self.tokenizer(
                    texts,
                    padding=True,
                    truncation=True,
                    max_length=self.cfg.max_tokens,
                    return_tensors="pt",
                ).to(self.cfg.device)
                hidden = self.model(**batch).last_hidden_state
                mask = batch["attention_mask"].unsqueeze(-1)
                if self.cfg.pooling is Pooling.LAST_TOKEN:
                    lengths = batch["attention_mask"].sum(dim=1) - 1
                    pooled = hidden[torch.arange(hidden.shape[0]), lengths]
                else:
                    pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1)
                pooled = torch.nn.functional.normalize(pooled, dim=-1)
            out = pooled.cpu().numpy().astype(np.float64)
        except ModelError:
            raise
        except Exception as exc:
            raise ModelError(str(exc)) from exc
        if out.shape[1] != self.cfg.dim:
            raise ModelError(
                f"model emits dim {out.shape[1]} but config advertises {self.cfg.dim}"
            )
        return out


def make_encoder(cfg: AdapterConfig):
    if cfg.model_id == "hashing":
        return HashingTextEncoder(cfg)
    return TransformerEncoder(cfg)

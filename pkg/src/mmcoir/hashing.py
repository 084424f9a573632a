"""Fixed, platform-independent hash functions shared across the engine.

Two hash families are used: FNV-1a (64-bit) for the per-n-gram feature
hashing kernels, and keyed blake2b for whole-payload digests, cache keys and
report fingerprints.  All constants here are frozen; changing any of them
invalidates caches and persisted indexes.
"""

from __future__ import annotations

import hashlib

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes, state: int = FNV_OFFSET) -> int:
    """Plain FNV-1a over ``data``, continuing from ``state``."""
    h = state
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


# Namespace states: hashing the same bytes under different namespaces must
# give unrelated features (text stream vs image features).
TEXT_GRAM_STATE = fnv1a64(b"mmcoir/text-gram/v1")
IMAGE_HIST_STATE = fnv1a64(b"mmcoir/image-hist/v1")
IMAGE_LEN_STATE = fnv1a64(b"mmcoir/image-len/v1")

_WHOLE_TEXT_KEY = b"mmcoir-text-whole/v1"
_DIGEST_KEY = b"mmcoir-digest/v1"


def whole_text_hash(data: bytes) -> int:
    """64-bit keyed hash of a full byte payload (one feature per item)."""
    return int.from_bytes(
        hashlib.blake2b(data, digest_size=8, key=_WHOLE_TEXT_KEY).digest(), "little"
    )


def content_digest(*parts: bytes) -> str:
    """Stable 128-bit hex digest of one or more byte payloads."""
    h = hashlib.blake2b(digest_size=16, key=_DIGEST_KEY)
    for part in parts:
        h.update(len(part).to_bytes(8, "little"))
        h.update(part)
    return h.hexdigest()


def bucket_and_sign(h: int, dim: int) -> tuple[int, float]:
    """Map a 64-bit hash to a feature bucket and a ±1 sign."""
    return h % dim, (-1.0 if h >> 63 else 1.0)

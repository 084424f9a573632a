"""Embedding backends: deterministic built-in encoder, remote client, cache.

The built-in encoder is a dependency-free test fixture, not a quality claim:
canonical text is feature-hashed as signed byte 3-grams (plus one
whole-payload feature so short strings never embed to zero), and an attached
image contributes a 64-bin byte-value histogram and a log-length feature
under a distinct hash namespace.  Parts are summed and l2-normalized.

Remote backends speak a small HTTP protocol; the engine re-normalizes their
output, so unit norm holds downstream regardless of the server.
"""

from __future__ import annotations

import base64
import binascii
import enum
import functools
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import requests

from . import _kernels, hashing
from .corpus import SerializedItem
from .errors import (
    CacheCorrupt,
    ConfigError,
    DimMismatch,
    ImageReadError,
    ProtocolError,
    TransportError,
)

logger = logging.getLogger(__name__)

BUILTIN_BACKEND_ID = "builtin-hash/v1"
CACHE_MAGIC = b"MMCOIR-EMB-CACHE"

_RETRIES = 3
_BACKOFF_BASE_S = 0.2


class BackendKind(enum.Enum):
    BUILTIN_HASH = "builtin"
    REMOTE = "remote"


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    dim: int
    endpoint: str | None = None
    token_budget: int = 256
    cache_dir: str | None = None
    model_id: str = ""
    batch_size: int = 32
    parallelism: int = 1
    send_image_b64: bool = False

    def __post_init__(self):
        if self.dim < 8:
            raise ConfigError(f"embedding dim must be >= 8, got {self.dim}")
        if self.kind is BackendKind.REMOTE and not self.endpoint:
            raise ConfigError("remote backend requires an endpoint")

    @property
    def backend_id(self) -> str:
        if self.kind is BackendKind.BUILTIN_HASH:
            return BUILTIN_BACKEND_ID
        return f"remote/{self.model_id or self.endpoint}"


@dataclass(frozen=True)
class EmbeddingVector:
    """Unit-norm float32 vector tagged with its producing backend."""

    values: np.ndarray
    dim: int
    backend_id: str

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float32))
        self.values.setflags(write=False)
        if self.values.shape != (self.dim,):
            raise DimMismatch(f"expected dim {self.dim}, got shape {self.values.shape}")


def _normalized(raw: np.ndarray) -> np.ndarray:
    vec = raw.astype(np.float64, copy=False)
    norm = math.sqrt(float(vec @ vec))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    out = (vec / norm).astype(np.float32)
    # One float32-space correction pass keeps the norm within 1e-6 even for
    # large dims, where a single float64 pass can drift past tolerance.
    out /= np.float32(math.sqrt(float(out.astype(np.float64) @ out.astype(np.float64))))
    return out


@functools.lru_cache(maxsize=8)
def _image_feature_table(dim: int) -> tuple[np.ndarray, np.ndarray, int, float]:
    buckets = np.empty(64, dtype=np.intp)
    signs = np.empty(64, dtype=np.float64)
    for bin_no in range(64):
        h = hashing.fnv1a64(bytes([bin_no]), hashing.IMAGE_HIST_STATE)
        buckets[bin_no], signs[bin_no] = hashing.bucket_and_sign(h, dim)
    len_bucket, len_sign = hashing.bucket_and_sign(
        hashing.fnv1a64(b"length", hashing.IMAGE_LEN_STATE), dim
    )
    return buckets, signs, len_bucket, len_sign


def read_image_bytes(image_ref: str, root: str | None = None) -> bytes:
    path = Path(root) / image_ref if root else Path(image_ref)
    try:
        return path.read_bytes()
    except OSError as exc:
        raise ImageReadError(str(path), str(exc)) from exc


def _accumulate_text(text: str, out: np.ndarray) -> None:
    data = text.encode("utf-8")
    if not data:
        return
    h = hashing.whole_text_hash(data)
    bucket, sign = hashing.bucket_and_sign(h, out.shape[0])
    out[bucket] += sign
    _kernels.accumulate_ngrams(data, hashing.TEXT_GRAM_STATE, out)


def _accumulate_image(data: bytes, out: np.ndarray) -> None:
    dim = out.shape[0]
    buckets, signs, len_bucket, len_sign = _image_feature_table(dim)
    values = np.frombuffer(data, dtype=np.uint8)
    counts = np.bincount(values >> 2, minlength=64).astype(np.float64)
    np.add.at(out, buckets, signs * counts)
    out[len_bucket] += len_sign * math.log1p(len(data))


def embed_builtin(item: SerializedItem, dim: int, image_root: str | None = None) -> EmbeddingVector:
    """Deterministic hash embedding of a serialized item."""
    if dim < 8:
        raise ConfigError(f"embedding dim must be >= 8, got {dim}")
    out = np.zeros(dim, dtype=np.float64)
    _accumulate_text(item.canonical_text, out)
    if item.image_ref is not None:
        _accumulate_image(read_image_bytes(item.image_ref, image_root), out)
    return EmbeddingVector(_normalized(out), dim, BUILTIN_BACKEND_ID)


# --- remote wire protocol ------------------------------------------------------


def _item_payload(item: SerializedItem, cfg: BackendConfig, image_root: str | None) -> dict:
    image_b64 = None
    if cfg.send_image_b64 and item.image_ref is not None:
        image_b64 = base64.b64encode(read_image_bytes(item.image_ref, image_root)).decode("ascii")
    return {
        "text": item.canonical_text,
        "image_path": item.image_ref,
        "image_b64": image_b64,
    }


def _post_with_retries(endpoint: str, payload: dict, sleep: Callable[[float], None]) -> dict:
    last: Exception | None = None
    for attempt in range(_RETRIES):
        try:
            resp = requests.post(endpoint, json=payload, timeout=30)
        except requests.RequestException as exc:
            last = exc
            sleep(_BACKOFF_BASE_S * 2**attempt)
            continue
        if resp.status_code >= 500:
            last = TransportError(f"server returned {resp.status_code}")
            sleep(_BACKOFF_BASE_S * 2**attempt)
            continue
        if resp.status_code != 200:
            raise ProtocolError(f"embedding endpoint returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response from {endpoint}") from exc
    raise TransportError(f"embedding endpoint unreachable after {_RETRIES} attempts: {last}")


def _parse_vectors(body: dict, n_items: int, dim: int, backend_id: str) -> list[EmbeddingVector]:
    if not isinstance(body, dict) or "vectors" not in body or "dim" not in body:
        raise ProtocolError("response must carry 'dim' and 'vectors'")
    if body["dim"] != dim:
        raise DimMismatch(f"backend advertises dim {body['dim']}, engine expects {dim}")
    vectors = body["vectors"]
    if not isinstance(vectors, list) or len(vectors) != n_items:
        raise ProtocolError(f"expected {n_items} vectors, got {len(vectors) if isinstance(vectors, list) else 'non-list'}")
    out = []
    for row in vectors:
        arr = np.asarray(row, dtype=np.float64)
        if arr.shape != (dim,):
            raise DimMismatch(f"vector of shape {arr.shape}, expected ({dim},)")
        out.append(EmbeddingVector(_normalized(arr), dim, backend_id))
    return out


def embed_remote(
    items: Sequence[SerializedItem],
    cfg: BackendConfig,
    image_root: str | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[EmbeddingVector]:
    """Embed a batch through the HTTP wire protocol, order-preserving."""
    if not items:
        raise ValueError("batch must be non-empty")
    chunks = [items[i : i + cfg.batch_size] for i in range(0, len(items), cfg.batch_size)]

    def one(chunk: Sequence[SerializedItem]) -> list[EmbeddingVector]:
        payload = {
            "model": cfg.model_id,
            "dim": cfg.dim,
            "max_tokens": cfg.token_budget,
            "items": [_item_payload(it, cfg, image_root) for it in chunk],
        }
        body = _post_with_retries(cfg.endpoint, payload, sleep)
        return _parse_vectors(body, len(chunk), cfg.dim, cfg.backend_id)

    if cfg.parallelism > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            results = list(pool.map(one, chunks))
    else:
        results = [one(c) for c in chunks]
    return [vec for chunk in results for vec in chunk]


# --- cache ---------------------------------------------------------------------


def _cache_key(item: SerializedItem, cfg: BackendConfig, image_root: str | None) -> str:
    text_digest = hashing.content_digest(item.canonical_text.encode("utf-8"))
    image_digest = "-"
    if item.image_ref is not None:
        image_digest = hashing.content_digest(read_image_bytes(item.image_ref, image_root))
    return hashing.content_digest(
        cfg.backend_id.encode(),
        str(cfg.dim).encode(),
        str(cfg.token_budget).encode(),
        text_digest.encode(),
        image_digest.encode(),
    )


def _cache_read(path: Path, dim: int, key: str) -> np.ndarray:
    data = path.read_bytes()
    if len(data) != len(CACHE_MAGIC) + 4 + 4 * dim:
        raise CacheCorrupt(key, f"size {len(data)}")
    if data[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise CacheCorrupt(key, "bad magic")
    stored_dim = int.from_bytes(data[len(CACHE_MAGIC) : len(CACHE_MAGIC) + 4], "little")
    if stored_dim != dim:
        raise CacheCorrupt(key, f"dim {stored_dim} != {dim}")
    return np.frombuffer(data[len(CACHE_MAGIC) + 4 :], dtype="<f4").copy()


def _cache_write(path: Path, vec: np.ndarray) -> None:
    blob = CACHE_MAGIC + len(vec).to_bytes(4, "little") + vec.astype("<f4").tobytes()
    tmp = path.with_suffix(".tmp-%d" % os.getpid())
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def embed_items(
    items: Sequence[SerializedItem],
    cfg: BackendConfig,
    image_root: str | None = None,
) -> list[EmbeddingVector]:
    """Embed through the configured backend, consulting the cache when set.

    Cache hits never touch the backend; results are bit-exact with and
    without the cache.  Corrupt entries are recomputed and overwritten.
    """

    def compute(batch: Sequence[SerializedItem]) -> list[EmbeddingVector]:
        if cfg.kind is BackendKind.BUILTIN_HASH:
            return [embed_builtin(it, cfg.dim, image_root) for it in batch]
        return embed_remote(batch, cfg, image_root)

    if cfg.cache_dir is None:
        return compute(items) if items else []

    cache_dir = Path(cfg.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    out: list[EmbeddingVector | None] = [None] * len(items)
    misses: list[int] = []
    for i, item in enumerate(items):
        key = _cache_key(item, cfg, image_root)
        path = cache_dir / f"{key}.emb"
        if path.exists():
            try:
                values = _cache_read(path, cfg.dim, key)
                out[i] = EmbeddingVector(values, cfg.dim, cfg.backend_id)
                continue
            except CacheCorrupt as exc:
                logger.warning("recomputing %s", exc)
        misses.append(i)
    if misses:
        computed = compute([items[i] for i in misses])
        for i, vec in zip(misses, computed):
            key = _cache_key(items[i], cfg, image_root)
            _cache_write(cache_dir / f"{key}.emb", np.asarray(vec.values))
            out[i] = vec
    return [v for v in out if v is not None]


def decode_b64_image(data: str) -> bytes:
    try:
        return base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ProtocolError(f"invalid base64 image payload: {exc}") from exc


def vectors_matrix(vectors: Sequence[EmbeddingVector]) -> np.ndarray:
    """Stack embedding vectors into a C-contiguous float32 matrix."""
    if not vectors:
        return np.empty((0, 0), dtype=np.float32)
    dims = {v.dim for v in vectors}
    backends = {v.backend_id for v in vectors}
    if len(dims) > 1 or len(backends) > 1:
        raise DimMismatch(f"mixed vectors: dims={dims}, backends={backends}")
    return np.ascontiguousarray(np.stack([v.values for v in vectors]))

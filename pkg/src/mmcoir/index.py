"""Exact top-k maximum inner product search with binary persistence.

Scores are float64 sequential accumulations of float32 inputs (the kernel
contract), ties break by ascending id, and the index is immutable after
build, so arbitrarily many readers can share it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .embedder import EmbeddingVector, vectors_matrix
from .errors import CorruptIndex, DimMismatch, DuplicateId, EmptyPool

INDEX_MAGIC = b"MMCOIR-IDX1"

_NORM_TOL = 1e-6


@dataclass(frozen=True)
class PayloadRef:
    dataset_tag: str
    row: int
    modality_mask: str

    def to_tag(self) -> str:
        return json.dumps(
            {"dataset": self.dataset_tag, "row": self.row, "mask": self.modality_mask},
            separators=(",", ":"),
        )

    @classmethod
    def from_tag(cls, tag: str) -> "PayloadRef":
        obj = json.loads(tag)
        return cls(obj["dataset"], obj["row"], obj["mask"])


@dataclass(frozen=True)
class VectorIndex:
    dim: int
    backend_id: str
    ids: np.ndarray  # uint64, unique
    rows: np.ndarray  # float32 (n, dim), unit-norm, C-contiguous
    payload_refs: dict[int, PayloadRef]

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass(frozen=True)
class RetrievalResult:
    query_id: int | None
    hits: list[tuple[int, float]]  # (id, score), score-descending then id-ascending
    k: int


def build(
    vectors: Sequence[EmbeddingVector] | np.ndarray,
    ids: Sequence[int],
    payload_refs: Mapping[int, PayloadRef],
    backend_id: str | None = None,
) -> VectorIndex:
    """Assemble an immutable index from aligned vectors and ids."""
    if isinstance(vectors, np.ndarray):
        rows = np.ascontiguousarray(vectors, dtype=np.float32)
        if backend_id is None:
            raise ValueError("backend_id is required when passing a raw matrix")
    else:
        rows = vectors_matrix(vectors)
        backend_id = backend_id or (vectors[0].backend_id if vectors else "none")
    if rows.ndim != 2:
        raise DimMismatch(f"expected a 2-d matrix, got shape {rows.shape}")
    if len(ids) != rows.shape[0]:
        raise DimMismatch(f"{len(ids)} ids for {rows.shape[0]} vectors")
    id_arr = np.asarray(list(ids), dtype=np.uint64)
    if len(np.unique(id_arr)) != len(id_arr):
        raise DuplicateId("index ids must be unique")
    if rows.shape[0]:
        norms = np.linalg.norm(rows.astype(np.float64), axis=1)
        bad = np.abs(norms - 1.0) > _NORM_TOL
        if bad.any():
            raise ValueError(f"{int(bad.sum())} rows are not unit-norm within {_NORM_TOL}")
    return VectorIndex(
        dim=rows.shape[1],
        backend_id=backend_id,
        ids=id_arr,
        rows=rows,
        payload_refs=dict(payload_refs),
    )


def _query_values(query: EmbeddingVector | np.ndarray, dim: int) -> np.ndarray:
    values = query.values if isinstance(query, EmbeddingVector) else np.asarray(query)
    values = np.ascontiguousarray(values, dtype=np.float32)
    if values.shape != (dim,):
        raise DimMismatch(f"query shape {values.shape} does not match index dim {dim}")
    return values


def search_topk(
    index: VectorIndex,
    query: EmbeddingVector | np.ndarray,
    k: int,
    exclude: frozenset[int] | set[int] | None = None,
    query_id: int | None = None,
) -> RetrievalResult:
    """Exact top-k by inner product; ties break toward the lower id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise EmptyPool("index holds no vectors")
    scores = _kernels.dot_scores(index.rows, _query_values(query, index.dim))
    order = np.lexsort((index.ids, -scores))
    hits: list[tuple[int, float]] = []
    excluded = exclude or ()
    for pos in order:
        item_id = int(index.ids[pos])
        if item_id in excluded:
            continue
        hits.append((item_id, float(scores[pos])))
        if len(hits) == k:
            break
    return RetrievalResult(query_id=query_id, hits=hits, k=k)


def rank_of(
    index: VectorIndex,
    query: EmbeddingVector | np.ndarray,
    target_id: int,
    exclude: frozenset[int] | set[int] | None = None,
) -> int | None:
    """1-based rank of ``target_id`` under the same tie rule, or None.

    Counting form of the full sort: rank = 1 + |better| + |tied with lower id|.
    """
    if len(index) == 0:
        raise EmptyPool("index holds no vectors")
    scores = _kernels.dot_scores(index.rows, _query_values(query, index.dim))
    mask = np.ones(len(index), dtype=bool)
    if exclude:
        mask &= ~np.isin(index.ids, np.fromiter(exclude, dtype=np.uint64))
    where = np.nonzero(index.ids == np.uint64(target_id))[0]
    if len(where) == 0 or not mask[where[0]]:
        return None
    pos = int(where[0])
    target_score = scores[pos]
    better = int(np.count_nonzero(mask & (scores > target_score)))
    tied_lower = int(
        np.count_nonzero(mask & (scores == target_score) & (index.ids < np.uint64(target_id)))
    )
    return 1 + better + tied_lower


# --- persistence ---------------------------------------------------------------


def save_index(index: VectorIndex, path: str | Path) -> None:
    """Write the binary index file (little-endian throughout)."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<IQ", index.dim, len(index)))
        fh.write(index.ids.astype("<u8").tobytes())
        for item_id in index.ids:
            tag = index.payload_refs[int(item_id)].to_tag().encode("utf-8")
            fh.write(struct.pack("<I", len(tag)))
            fh.write(tag)
        fh.write(np.ascontiguousarray(index.rows, dtype="<f4").tobytes())
        trailer = index.backend_id.encode("utf-8")
        fh.write(struct.pack("<I", len(trailer)))
        fh.write(trailer)


def load_index(path: str | Path) -> VectorIndex:
    """Read an index file; any structural violation raises CorruptIndex.

    The header is validated against the real file size before any
    count-proportional allocation happens.
    """
    data = Path(path).read_bytes()
    if len(data) < len(INDEX_MAGIC) or data[: len(INDEX_MAGIC)] != INDEX_MAGIC:
        raise CorruptIndex(0, "bad magic")
    off = len(INDEX_MAGIC)
    if len(data) < off + 12:
        raise CorruptIndex(off, "truncated header")
    dim, count = struct.unpack_from("<IQ", data, off)
    off += 12
    if dim == 0:
        raise CorruptIndex(off, "zero dimension")
    # Lower bound: ids + one length prefix per payload + rows + trailer length.
    minimum = off + count * 8 + count * 4 + count * dim * 4 + 4
    if len(data) < minimum:
        raise CorruptIndex(off, f"file of {len(data)} bytes cannot hold {count} rows of dim {dim}")
    ids = np.frombuffer(data, dtype="<u8", count=count, offset=off).copy()
    off += count * 8
    payload_refs: dict[int, PayloadRef] = {}
    for item_id in ids:
        if len(data) < off + 4:
            raise CorruptIndex(off, "truncated payload table")
        (tag_len,) = struct.unpack_from("<I", data, off)
        off += 4
        if len(data) < off + tag_len:
            raise CorruptIndex(off, "truncated payload tag")
        try:
            payload_refs[int(item_id)] = PayloadRef.from_tag(data[off : off + tag_len].decode("utf-8"))
        except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
            raise CorruptIndex(off, f"bad payload tag: {exc}") from exc
        off += tag_len
    rows_bytes = count * dim * 4
    if len(data) < off + rows_bytes + 4:
        raise CorruptIndex(off, "truncated rows")
    rows = (
        np.frombuffer(data, dtype="<f4", count=count * dim, offset=off)
        .reshape(count, dim)
        .copy()
    )
    off += rows_bytes
    (trailer_len,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + trailer_len:
        raise CorruptIndex(off, "truncated backend tag")
    backend_id = data[off : off + trailer_len].decode("utf-8")
    return VectorIndex(
        dim=dim,
        backend_id=backend_id,
        ids=ids,
        rows=np.ascontiguousarray(rows),
        payload_refs=payload_refs,
    )

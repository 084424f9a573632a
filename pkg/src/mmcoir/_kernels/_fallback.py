"""Pure-NumPy kernels, bit-identical to the compiled extension.

The 3-gram hash is FNV-1a 64 evaluated with wrapping uint64 arithmetic, so
the vectorized form reproduces the C loop exactly.  Dot scores multiply
float32 values in float64 (each product is exact, 48 mantissa bits) and then
reduce with ``np.add.accumulate``, whose left-fold order matches the
sequential C accumulation.
"""

from __future__ import annotations

import numpy as np

_PRIME = np.uint64(0x100000001B3)
_SIGN_BIT = np.uint64(63)

# Row chunk for the float64 product buffer in dot scoring (bounds memory).
_CHUNK_ROWS = 2048


def accumulate_ngrams(data: bytes, state: int, out: np.ndarray) -> int:
    """Add signed byte-3-gram counts of ``data`` into ``out`` buckets."""
    n = len(data)
    if n < 3:
        return 0
    dim = out.shape[0]
    b = np.frombuffer(data, dtype=np.uint8).astype(np.uint64)
    h = (np.uint64(state) ^ b[:-2]) * _PRIME
    h = (h ^ b[1:-1]) * _PRIME
    h = (h ^ b[2:]) * _PRIME
    buckets = (h % np.uint64(dim)).astype(np.intp)
    signs = np.where((h >> _SIGN_BIT).astype(bool), -1.0, 1.0)
    out += np.bincount(buckets, weights=signs, minlength=dim)
    return n - 2


def _scores_for(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    prod = rows.astype(np.float64) * query.astype(np.float64)[None, :]
    return np.add.accumulate(prod, axis=1, out=prod)[:, -1]


def dot_scores(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Exact inner products: float32 inputs, sequential float64 accumulation."""
    if query.shape[0] != rows.shape[1]:
        raise ValueError("query dimension does not match rows")
    n = rows.shape[0]
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, _CHUNK_ROWS):
        stop = min(start + _CHUNK_ROWS, n)
        out[start:stop] = _scores_for(rows[start:stop], query)
    return out


def dot_scores_block(rows: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Row-major block of :func:`dot_scores`, one output row per query."""
    if queries.shape[1] != rows.shape[1]:
        raise ValueError("query dimension does not match rows")
    out = np.empty((queries.shape[0], rows.shape[0]), dtype=np.float64)
    for k in range(queries.shape[0]):
        out[k] = dot_scores(rows, queries[k])
    return out

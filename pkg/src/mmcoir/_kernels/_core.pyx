# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: byte 3-gram feature hashing and exact dot scoring.

Numerics are pinned so the NumPy fallback can reproduce them bit for bit:
FNV-1a 64 with silent wraparound for grams, and per-row sequential float64
accumulation of exact float32 products for scores.
"""

import numpy as np


def accumulate_ngrams(const unsigned char[::1] data, unsigned long long state,
                      double[::1] out):
    """Add signed byte-3-gram counts of ``data`` into ``out`` buckets."""
    cdef Py_ssize_t n = data.shape[0]
    cdef unsigned long long dim = <unsigned long long>out.shape[0]
    cdef unsigned long long h, prime = 0x100000001b3ULL
    cdef Py_ssize_t i
    if n < 3:
        return 0
    for i in range(n - 2):
        h = (state ^ data[i]) * prime
        h = (h ^ data[i + 1]) * prime
        h = (h ^ data[i + 2]) * prime
        if h >> 63:
            out[h % dim] -= 1.0
        else:
            out[h % dim] += 1.0
    return n - 2


def dot_scores(const float[:, ::1] rows, const float[::1] query):
    """Exact inner products: float32 inputs, sequential float64 accumulation."""
    cdef Py_ssize_t n = rows.shape[0], d = rows.shape[1]
    if query.shape[0] != d:
        raise ValueError("query dimension does not match rows")
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double acc
    cdef Py_ssize_t i, j
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += <double>rows[i, j] * <double>query[j]
        ov[i] = acc
    return out


def dot_scores_block(const float[:, ::1] rows, const float[:, ::1] queries):
    """Row-major block of :func:`dot_scores`, one output row per query."""
    cdef Py_ssize_t n = rows.shape[0], d = rows.shape[1], m = queries.shape[0]
    if queries.shape[1] != d:
        raise ValueError("query dimension does not match rows")
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double acc
    cdef Py_ssize_t i, j, k
    for k in range(m):
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += <double>rows[i, j] * <double>queries[k, j]
            ov[k, i] = acc
    return out

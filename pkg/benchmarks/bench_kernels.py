"""Benchmark the compiled kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py

Covers the two hot paths (byte 3-gram hashing and exact dot scoring) at the
sizes the engine actually runs, and verifies bitwise agreement while timing.
"""

from __future__ import annotations

import time

import numpy as np

from mmcoir._kernels import _fallback

try:
    from mmcoir._kernels import _core
except ImportError:
    _core = None


def timeit(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_ngrams():
    rng = np.random.default_rng(0)
    print("\nbyte 3-gram hashing (dim=512)")
    print(f"{'payload':>12} {'numpy':>12} {'cython':>12} {'speedup':>9}  equal")
    for size in (1_000, 100_000, 2_000_000):
        data = bytes(rng.integers(0, 256, size, dtype=np.uint8))
        out_np = np.zeros(512)
        t_np = timeit(lambda: _fallback.accumulate_ngrams(data, 0x12345, out_np))
        if _core is None:
            print(f"{size:>12,} {t_np * 1e3:>10.2f}ms {'n/a':>12}")
            continue
        out_cy = np.zeros(512)
        t_cy = timeit(lambda: _core.accumulate_ngrams(data, 0x12345, out_cy))
        a, b = np.zeros(512), np.zeros(512)
        _fallback.accumulate_ngrams(data, 0x12345, a)
        _core.accumulate_ngrams(data, 0x12345, b)
        print(
            f"{size:>12,} {t_np * 1e3:>10.2f}ms {t_cy * 1e3:>10.2f}ms "
            f"{t_np / t_cy:>8.1f}x  {np.array_equal(a, b)}"
        )


def bench_dots():
    rng = np.random.default_rng(1)
    print("\nexact top-k scan scoring (sequential f64 accumulation)")
    print(f"{'pool x dim':>16} {'numpy':>12} {'cython':>12} {'speedup':>9}  equal")
    for n, d in ((1_000, 256), (10_000, 256), (10_000, 768)):
        rows = rng.standard_normal((n, d)).astype(np.float32)
        q = rng.standard_normal(d).astype(np.float32)
        t_np = timeit(lambda: _fallback.dot_scores(rows, q))
        if _core is None:
            print(f"{f'{n:,} x {d}':>16} {t_np * 1e3:>10.2f}ms {'n/a':>12}")
            continue
        t_cy = timeit(lambda: _core.dot_scores(rows, q))
        equal = np.array_equal(_fallback.dot_scores(rows, q), _core.dot_scores(rows, q))
        print(
            f"{f'{n:,} x {d}':>16} {t_np * 1e3:>10.2f}ms {t_cy * 1e3:>10.2f}ms "
            f"{t_np / t_cy:>8.1f}x  {equal}"
        )


if __name__ == "__main__":
    print(f"compiled extension available: {_core is not None}")
    bench_ngrams()
    bench_dots()

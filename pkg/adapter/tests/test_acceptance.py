"""Adapter acceptance: engine conformance suite, norms, real-slice retrieval.

The retrieval check drives the live adapter through the engine itself (the
engine's remote backend, index and metrics), so the whole wire path is what
gets measured.
"""

from __future__ import annotations

import numpy as np

from conftest import FIXTURES

from mmcoir.align import ScoringConfig
from mmcoir.conformance import all_ok, check_endpoint
from mmcoir.corpus import ingest_eval
from mmcoir.embedder import BackendConfig, BackendKind, embed_remote
from mmcoir.evaluate import evaluate_task


def _report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[ACCEPTANCE] {name}: {status}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def test_engine_conformance_suite_passes(adapter):
    """The engine's wire-protocol checks run unmodified against the adapter."""
    url, cfg = adapter
    results = check_endpoint(url, dim=cfg.dim)
    failures = [r for r in results if not r.ok]
    _report("adapter_conformance", all_ok(results),
            f"{len(results) - len(failures)}/{len(results)} checks" +
            (f"; failing: {failures}" if failures else ""))


def test_vectors_unit_norm_through_engine(adapter):
    url, cfg = adapter
    backend = BackendConfig(kind=BackendKind.REMOTE, dim=cfg.dim, endpoint=url)
    from mmcoir.corpus import SerializedItem

    items = [SerializedItem(t, None, 256) for t in ["a", "plt.plot(x)", "<svg/>"]]
    vectors = embed_remote(items, backend)
    worst = max(
        abs(float(np.linalg.norm(np.asarray(v.values, dtype=np.float64))) - 1.0)
        for v in vectors
    )
    _report("adapter_unit_norm", worst <= 1e-5, f"max deviation {worst:.2e}")


def test_real_slice_hit_at_1_beats_random(adapter):
    """100-pair description->code slice: Hit@1 >= 5x the 1/pool baseline."""
    url, cfg = adapter
    backend = BackendConfig(kind=BackendKind.REMOTE, dim=cfg.dim, endpoint=url)
    with open(FIXTURES / "real_slice.jsonl", encoding="utf-8") as fh:
        pairs = ingest_eval(fh, "qt→rc", "real-slice")
    assert len(pairs) == 100
    run = evaluate_task(pairs, backend, None, ScoringConfig(), budget=256)
    hit1 = run.report.hit_at[1]
    baseline = 1.0 / run.report.n_queries
    _report(
        "adapter_real_slice",
        hit1 >= 5 * baseline,
        f"hit@1 {hit1:.3f} vs 5x baseline {5 * baseline:.3f} (pool {run.report.n_queries})",
    )

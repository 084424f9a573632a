"""Embedding wire-protocol conformance checks.

Runs the engine's remote-backend contract against any live endpoint: shape
and ordering of the response, unit-norm output after engine normalization,
determinism across identical requests, and rejection of malformed bodies.
The adapter test suite runs these checks unmodified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import requests

from .corpus import SerializedItem
from .embedder import BackendConfig, BackendKind, embed_remote


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def _items(texts: list[str], budget: int) -> list[SerializedItem]:
    return [SerializedItem(t, None, budget) for t in texts]


def check_endpoint(
    endpoint: str,
    dim: int,
    model_id: str = "",
    token_budget: int = 256,
    norm_tol: float = 1e-5,
) -> list[CheckResult]:
    """Run every conformance check; returns one result per check."""
    cfg = BackendConfig(
        kind=BackendKind.REMOTE,
        dim=dim,
        endpoint=endpoint,
        token_budget=token_budget,
        model_id=model_id,
    )
    results = []

    texts = ["alpha beta", "def main():\n    return 1", "third item with more words"]
    vectors = embed_remote(_items(texts, token_budget), cfg)
    results.append(
        CheckResult("batch_shape", len(vectors) == 3 and all(v.dim == dim for v in vectors))
    )

    norms = [float(np.linalg.norm(np.asarray(v.values, dtype=np.float64))) for v in vectors]
    worst = max(abs(n - 1.0) for n in norms)
    results.append(
        CheckResult("unit_norm", worst <= norm_tol, f"max norm deviation {worst:.2e}")
    )

    again = embed_remote(_items(texts, token_budget), cfg)
    drift = max(
        float(np.max(np.abs(np.asarray(a.values) - np.asarray(b.values))))
        for a, b in zip(vectors, again)
    )
    results.append(CheckResult("deterministic", drift <= 1e-6, f"max drift {drift:.2e}"))

    single = embed_remote(_items([texts[1]], token_budget), cfg)
    align = float(
        np.asarray(single[0].values, dtype=np.float64)
        @ np.asarray(vectors[1].values, dtype=np.float64)
    )
    results.append(
        CheckResult("order_preserving", align >= 1.0 - 1e-5, f"cos(single, batch[1]) = {align:.6f}")
    )

    distinct = float(
        np.asarray(vectors[0].values, dtype=np.float64)
        @ np.asarray(vectors[1].values, dtype=np.float64)
    )
    results.append(
        CheckResult("distinct_inputs", distinct < 1.0 - 1e-6, f"cos(items 0,1) = {distinct:.6f}")
    )

    resp = requests.post(endpoint, json={"model": model_id, "items": "nonsense"}, timeout=10)
    results.append(
        CheckResult("rejects_malformed", resp.status_code == 400, f"status {resp.status_code}")
    )

    return results


def all_ok(results: list[CheckResult]) -> bool:
    return all(r.ok for r in results)

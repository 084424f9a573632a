"""Wire-protocol conformance checks against the in-process mock backend.

The same ``check_endpoint`` battery runs unmodified against any live
embedding server (see the adapter package's tests).
"""

from __future__ import annotations

from mock_server import MockEmbeddingServer
from mmcoir.conformance import all_ok, check_endpoint


def test_mock_backend_conforms():
    with MockEmbeddingServer(dim=32) as server:
        results = check_endpoint(server.endpoint, dim=32)
    assert all_ok(results), [r for r in results if not r.ok]
    assert {r.name for r in results} == {
        "batch_shape",
        "unit_norm",
        "deterministic",
        "order_preserving",
        "distinct_inputs",
        "rejects_malformed",
    }


def test_scaled_backend_still_conforms():
    # Server returns non-unit vectors; the engine-side renormalization is
    # part of the contract under test.
    with MockEmbeddingServer(dim=16, scale=3.0) as server:
        results = check_endpoint(server.endpoint, dim=16)
    assert all_ok(results), [r for r in results if not r.ok]

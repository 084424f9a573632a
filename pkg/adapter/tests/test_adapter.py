"""Adapter server behaviour: protocol statuses, ordering, determinism."""

from __future__ import annotations

import json

import numpy as np
import pytest
import requests

from mmcoir_adapter import AdapterConfig, make_server, serve_forever_in_thread
from mmcoir_adapter.encoders import HashingTextEncoder, truncate_units


def post(url, body):
    return requests.post(url, json=body, timeout=10)


def embed_req(texts, dim=None, max_tokens=256):
    body = {"model": "", "max_tokens": max_tokens,
            "items": [{"text": t, "image_path": None, "image_b64": None} for t in texts]}
    if dim is not None:
        body["dim"] = dim
    return body


class TestProtocol:
    def test_row_alignment(self, adapter):
        url, cfg = adapter
        resp = post(url, embed_req(["alpha", "beta", "gamma"], dim=cfg.dim))
        assert resp.status_code == 200
        body = resp.json()
        assert body["dim"] == cfg.dim
        assert len(body["vectors"]) == 3
        single = post(url, embed_req(["beta"], dim=cfg.dim)).json()
        assert np.allclose(single["vectors"][0], body["vectors"][1])

    def test_unit_norm_within_1e5(self, adapter):
        url, cfg = adapter
        texts = ["short", "def f():\n    return 12", "x " * 500, ""]
        body = post(url, embed_req(texts, dim=cfg.dim)).json()
        for row in body["vectors"]:
            assert abs(np.linalg.norm(np.asarray(row, dtype=np.float64)) - 1.0) <= 1e-5

    def test_deterministic(self, adapter):
        url, cfg = adapter
        a = post(url, embed_req(["same text"], dim=cfg.dim)).json()
        b = post(url, embed_req(["same text"], dim=cfg.dim)).json()
        assert a == b

    def test_dim_mismatch_is_400(self, adapter):
        url, cfg = adapter
        resp = post(url, embed_req(["x"], dim=cfg.dim + 1))
        assert resp.status_code == 400

    def test_malformed_items_400(self, adapter):
        url, _ = adapter
        assert post(url, {"model": "", "items": "nonsense"}).status_code == 400
        assert post(url, {"model": "", "items": [{"text": 5}]}).status_code == 400
        assert post(url, {"model": "", "items": []}).status_code == 400

    def test_oversized_item_413(self):
        cfg = AdapterConfig(dim=64, max_item_chars=100)
        server = make_server(cfg)
        serve_forever_in_thread(server)
        try:
            host, port = server.server_address
            resp = post(f"http://{host}:{port}/embed", embed_req(["y" * 200]))
            assert resp.status_code == 413
        finally:
            server.shutdown()

    def test_health(self, adapter):
        url, cfg = adapter
        health = requests.get(url.rsplit("/", 1)[0] + "/health", timeout=5).json()
        assert health["dim"] == cfg.dim


class TestEncoder:
    def test_truncation_by_units(self):
        cfg = AdapterConfig(dim=64, max_tokens=3)
        enc = HashingTextEncoder(cfg)
        long = "one two three four five"
        a = enc.encode([long])
        b = enc.encode(["one two three"])
        assert np.allclose(a, b)
        assert truncate_units(long, 3) == "one two three"

    def test_distinct_texts_distinct_vectors(self):
        enc = HashingTextEncoder(AdapterConfig(dim=128))
        a, b = enc.encode(["plt.bar(x, y)", "plt.scatter(x, y)"])
        assert float(a @ b) < 0.999

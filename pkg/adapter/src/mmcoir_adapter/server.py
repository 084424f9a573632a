"""HTTP server implementing the embedding wire protocol.

Request:  {"model": str, "dim": int, "max_tokens": int,
           "items": [{"text": str, "image_path": str|null, "image_b64": str|null}]}
Response: {"dim": int, "vectors": [[float, ...], ...]} row-aligned with items.

Statuses: 400 schema violation (including a request dim that contradicts the
advertised dim, rejected before inference), 413 item over the hard size
limit, 500 model errors.  A single encoder instance serves requests behind a
lock, so concurrent callers queue rather than share model state.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .config import AdapterConfig
from .encoders import ModelError, make_encoder


@dataclass
class AdapterState:
    cfg: AdapterConfig
    encoder: object
    lock: threading.Lock


def _validate(body: object, state: AdapterState) -> tuple[list[str] | None, int, str]:
    if not isinstance(body, dict):
        return None, 400, "body must be a JSON object"
    items = body.get("items")
    if not isinstance(items, list) or not items:
        return None, 400, "items must be a non-empty list"
    requested_dim = body.get("dim")
    if requested_dim is not None and requested_dim != state.cfg.dim:
        return None, 400, f"requested dim {requested_dim} != advertised {state.cfg.dim}"
    texts = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or not isinstance(item.get("text"), str):
            return None, 400, f"items[{i}].text must be a string"
        if len(item["text"]) > state.cfg.max_item_chars:
            return None, 413, f"items[{i}] exceeds {state.cfg.max_item_chars} characters"
        texts.append(item["text"])
    return texts, 200, ""


class _Handler(BaseHTTPRequestHandler):
    state: AdapterState

    def log_message(self, fmt, *args):
        pass

    def _reply(self, status: int, body: dict) -> None:
        blob = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def do_GET(self):
        if self.path == "/health":
            self._reply(200, {"status": "ok", "model": self.state.cfg.model_id,
                              "dim": self.state.cfg.dim})
        else:
            self._reply(404, {"error": "unknown path"})

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length))
        except (ValueError, json.JSONDecodeError):
            self._reply(400, {"error": "body is not valid JSON"})
            return
        texts, status, message = _validate(body, self.state)
        if texts is None:
            self._reply(status, {"error": message})
            return
        try:
            with self.state.lock:
                vectors = self.state.encoder.encode(texts)
        except ModelError as exc:
            self._reply(500, {"error": type(exc).__name__, "detail": str(exc)})
            return
        self._reply(200, {"dim": self.state.cfg.dim, "vectors": vectors.tolist()})


def make_server(cfg: AdapterConfig, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    state = AdapterState(cfg=cfg, encoder=make_encoder(cfg), lock=threading.Lock())
    handler = type("BoundHandler", (_Handler,), {"state": state})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever_in_thread(server: ThreadingHTTPServer) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return thread

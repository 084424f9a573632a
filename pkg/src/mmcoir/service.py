"""Read-only retrieval HTTP service.

Endpoints:
  POST /v1/search  {instruction?, text?, code?, image_b64?, corpus, k}
                   -> {"hits": [{"id", "score", "payload_ref"}]}
  GET  /v1/health  -> {"status", "corpora", "dim"}

Shared state (indexes, heads) is immutable after startup, so requests are
served concurrently without locking; identical requests get identical
responses.
"""

from __future__ import annotations

import json
import tempfile
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .align import HeadPair
from .corpus import Instruction, ModalItem, compose_query, compose_target
from .embedder import BackendConfig, decode_b64_image, embed_items
from .errors import EmptyItem, EngineError, TransportError
from .index import VectorIndex, search_topk


@dataclass(frozen=True)
class ServiceState:
    corpora: dict[str, VectorIndex]
    backend: BackendConfig
    heads: HeadPair | None
    image_root: str | None = None


class _Handler(BaseHTTPRequestHandler):
    state: ServiceState  # assigned by make_server

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _reply(self, status: int, body: dict) -> None:
        blob = json.dumps(body, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def do_GET(self):
        if self.path != "/v1/health":
            self._reply(404, {"error": "unknown path"})
            return
        dims = {idx.dim for idx in self.state.corpora.values()}
        self._reply(
            200,
            {
                "status": "ok",
                "corpora": sorted(self.state.corpora),
                "dim": dims.pop() if len(dims) == 1 else sorted(dims),
            },
        )

    def do_POST(self):
        if self.path != "/v1/search":
            self._reply(404, {"error": "unknown path"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length))
        except (ValueError, json.JSONDecodeError):
            self._reply(400, {"error": "body is not valid JSON"})
            return
        try:
            self._search(body)
        except TransportError as exc:
            self._reply(503, {"error": f"embedding backend unreachable: {exc}"})
        except EngineError as exc:
            self._reply(400, {"error": str(exc)})

    def _search(self, body: dict) -> None:
        problems = {}
        if not isinstance(body, dict):
            self._reply(400, {"error": "body must be a JSON object"})
            return
        corpus_tag = body.get("corpus")
        if not isinstance(corpus_tag, str):
            problems["corpus"] = "required string"
        k = body.get("k", 1)
        if not isinstance(k, int) or k < 1:
            problems["k"] = "must be a positive integer"
        text = body.get("text")
        code = body.get("code")
        image_b64 = body.get("image_b64")
        for name, value in (("text", text), ("code", code), ("image_b64", image_b64)):
            if value is not None and not isinstance(value, str):
                problems[name] = "must be a string when present"
        if text is None and code is None and image_b64 is None:
            problems["query"] = "at least one of text/code/image_b64 is required"
        instruction = body.get("instruction")
        if instruction is not None and not isinstance(instruction, str):
            problems["instruction"] = "must be a string when present"
        if problems:
            self._reply(400, {"error": "schema violation", "fields": problems})
            return
        if corpus_tag not in self.state.corpora:
            self._reply(404, {"error": f"unknown corpus {corpus_tag!r}"})
            return

        image_ref = None
        tmp = None
        try:
            if image_b64 is not None:
                data = decode_b64_image(image_b64)
                tmp = tempfile.NamedTemporaryFile(suffix=".img", delete=False)
                tmp.write(data)
                tmp.close()
                image_ref = tmp.name
            try:
                item = ModalItem(text=text, code=code, image_ref=image_ref)
            except EmptyItem as exc:
                self._reply(400, {"error": str(exc)})
                return
            # An explicit instruction conditions the query; without one the
            # raw content is embedded as-is, so posting a stored item's exact
            # content self-retrieves at score ~ 1.
            if instruction:
                inst = Instruction(template_id="request", text=instruction)
                serialized = compose_query(item, inst, self.state.backend.token_budget)
            else:
                serialized = compose_target(item, self.state.backend.token_budget)
            vector = embed_items([serialized], self.state.backend, None)[0]
            row = np.asarray(vector.values, dtype=np.float64)
            if self.state.heads is not None:
                row = self.state.heads.query.project(row)
            index = self.state.corpora[corpus_tag]
            result = search_topk(index, row.astype(np.float32), k=min(k, len(index)))
        finally:
            if tmp is not None:
                Path(tmp.name).unlink(missing_ok=True)

        hits = []
        for item_id, score in result.hits:
            ref = index.payload_refs[item_id]
            hits.append(
                {
                    "id": item_id,
                    "score": score,
                    "payload_ref": {
                        "dataset": ref.dataset_tag,
                        "row": ref.row,
                        "mask": ref.modality_mask,
                    },
                }
            )
        self._reply(200, {"hits": hits})


def make_server(
    state: ServiceState, host: str = "127.0.0.1", port: int = 0
) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"state": state})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever_in_thread(server: ThreadingHTTPServer) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return thread

"""Exemplar retrieval with the contamination guard, prompts, generation."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from mmcoir.corpus import ModalItem, ingest_train
from mmcoir.embedder import BackendConfig, BackendKind
from mmcoir.errors import EmptyCorpus, EmptyGeneration, GuardExhausted, TemplateUnknown, TransportError
from mmcoir.rag import (
    Exemplar,
    GuardMode,
    RagConfig,
    build_prompt,
    build_rag_corpus,
    extract_fenced_code,
    generate,
    retrieve_exemplars,
)

BACKEND = BackendConfig(kind=BackendKind.BUILTIN_HASH, dim=64)
BUDGET = 256


def train_rows(codes):
    return [
        json.dumps({"qry": f"make something {i}", "pos_text": code})
        for i, code in enumerate(codes)
    ]


def corpus_from(codes, tag="train"):
    pairs = ingest_train(train_rows(codes), lenient=True)
    return build_rag_corpus(pairs, BACKEND, None, BUDGET, tag)


class TestRetrieve:
    def test_planted_duplicate_guarded_out(self):
        target = "def render():\n    return chart"
        codes = [target, "other snippet a", "other snippet b"]
        corpus = corpus_from(codes)
        query = ModalItem(text="def render(): return chart")
        cfg = RagConfig(corpus_tag="train", k=1)
        exemplars = retrieve_exemplars(
            query, corpus, cfg, BACKEND, None, BUDGET, guard_target=target
        )
        assert len(exemplars) == 1
        assert exemplars[0].code != target
        unguarded = retrieve_exemplars(query, corpus, cfg, BACKEND, None, BUDGET)
        assert unguarded[0].code == target  # sanity: the duplicate ranks first

    def test_k_larger_than_corpus(self):
        corpus = corpus_from(["a()", "b()"])
        cfg = RagConfig(corpus_tag="train", k=5)
        exemplars = retrieve_exemplars(
            ModalItem(text="anything"), corpus, cfg, BACKEND, None, BUDGET, guard_target="a()"
        )
        assert len(exemplars) == 1  # two items, one guarded away

    def test_deterministic(self):
        corpus = corpus_from([f"snippet {i}" for i in range(8)])
        cfg = RagConfig(corpus_tag="train", k=3)
        q = ModalItem(text="snippet request")
        a = retrieve_exemplars(q, corpus, cfg, BACKEND, None, BUDGET)
        b = retrieve_exemplars(q, corpus, cfg, BACKEND, None, BUDGET)
        assert a == b

    def test_guard_exhausted(self):
        corpus = corpus_from(["only one"])
        cfg = RagConfig(corpus_tag="train", k=1)
        with pytest.raises(GuardExhausted):
            retrieve_exemplars(
                ModalItem(text="q"), corpus, cfg, BACKEND, None, BUDGET, guard_target="only one"
            )

    def test_empty_corpus(self):
        pairs = ingest_train(
            [json.dumps({"qry": "q [image]", "qry_img_path": "x.png", "pos_img_path": "y.png"})],
            lenient=True,
        )
        with pytest.raises(EmptyCorpus):
            build_rag_corpus(pairs, BACKEND, None, BUDGET, "imgs")

    def test_hash_guard_ignores_whitespace(self):
        target = "def f():\n    return 1"
        reformatted = "def f():  return 1"
        corpus = corpus_from([reformatted, "unrelated()"])
        cfg = RagConfig(corpus_tag="train", k=1, guard=GuardMode.CONTENT_HASH)
        exemplars = retrieve_exemplars(
            ModalItem(text="def f"), corpus, cfg, BACKEND, None, BUDGET, guard_target=target
        )
        assert exemplars[0].code == "unrelated()"

    def test_string_guard_is_exact(self):
        target = "def f():\n    return 1"
        reformatted = "def f():  return 1"
        corpus = corpus_from([reformatted, "unrelated()"])
        cfg = RagConfig(corpus_tag="train", k=2, guard=GuardMode.STRING_IDENTITY)
        exemplars = retrieve_exemplars(
            ModalItem(text="def f"), corpus, cfg, BACKEND, None, BUDGET, guard_target=target
        )
        assert {e.code for e in exemplars} == {reformatted, "unrelated()"}


class TestPrompt:
    def test_single_exemplar_single_fence(self):
        prompt = build_prompt(ModalItem(text="draw"), [Exemplar(0, "code()", 0.9)])
        assert prompt.rendered.count("Reference implementation 1:") == 1
        assert prompt.rendered.count("```") == 2

    def test_zero_exemplars_equal_no_rag(self):
        query = ModalItem(text="draw", image_ref="q.png")
        assert build_prompt(query, []).rendered == build_prompt(query, []).rendered
        no_rag = build_prompt(query, [])
        assert "Reference implementation" not in no_rag.rendered
        assert "[image]" in no_rag.rendered

    def test_rank_order_preserved(self):
        exemplars = [Exemplar(i, f"code_{i}()", 1.0 - i / 10) for i in range(3)]
        rendered = build_prompt(ModalItem(text="q"), exemplars).rendered
        positions = [rendered.index(f"code_{i}()") for i in range(3)]
        assert positions == sorted(positions)

    def test_exemplar_truncation(self):
        code = " ".join(f"tok{i}" for i in range(2000))
        prompt = build_prompt(ModalItem(text="q"), [Exemplar(0, code, 1.0)],
                              max_exemplar_units=512)
        block = prompt.rendered.split("```")[1]
        assert len(block.split()) == 512

    def test_unknown_template(self):
        with pytest.raises(TemplateUnknown):
            build_prompt(ModalItem(text="q"), [], template_id="nope")


class _GenHandler(BaseHTTPRequestHandler):
    response: dict = {}

    def log_message(self, fmt, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length))
        type(self).last_request = body
        blob = json.dumps(self.response).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)


def _gen_server(response):
    handler = type("H", (_GenHandler,), {"response": response})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    host, port = server.server_address
    return server, handler, f"http://{host}:{port}/gen"


class TestGenerate:
    def test_echo_contract(self):
        prompt = build_prompt(ModalItem(text="q"), [Exemplar(3, "the_code()", 1.0)])
        server, handler, url = _gen_server({"text": "the_code()"})
        try:
            text, meta = generate(prompt, url, model_id="mock")
            assert text == "the_code()"
            assert meta["exemplar_ids"] == [3]
            assert handler.last_request["prompt"] == prompt.rendered
        finally:
            server.shutdown()

    def test_unreachable_endpoint(self):
        prompt = build_prompt(ModalItem(text="q"), [])
        with pytest.raises(TransportError):
            generate(prompt, "http://127.0.0.1:9/gen", sleep=lambda s: None)

    def test_empty_generation(self):
        prompt = build_prompt(ModalItem(text="q"), [])
        server, _, url = _gen_server({"text": ""})
        try:
            with pytest.raises(EmptyGeneration):
                generate(prompt, url)
        finally:
            server.shutdown()

    def test_fence_extraction(self):
        prompt = build_prompt(ModalItem(text="q"), [])
        server, _, url = _gen_server({"text": "intro\n```python\nprint(1)\n```\noutro"})
        try:
            text, _ = generate(prompt, url, extract_fence=True)
            assert text == "print(1)\n"
        finally:
            server.shutdown()

    def test_extractor_passthrough_without_fence(self):
        assert extract_fenced_code("no fences here") == "no fences here"

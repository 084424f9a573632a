"""Retrieval-augmented prompt construction over a training code corpus.

Exemplars come from an index built over training-split code only.  Before a
prompt is assembled, any exemplar identical to the evaluation target (by the
configured guard) is dropped and backfilled from deeper ranks, so generated
prompts never leak the item under evaluation.
"""

from __future__ import annotations

import enum
import re
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import hashing
from .align import HeadPair
from .corpus import (
    Instruction,
    ModalItem,
    TrainingPair,
    compose_query,
    compose_target,
    instruction_for,
    mask_letters,
    truncate_units,
)
from .embedder import BackendConfig, embed_items, vectors_matrix
from .errors import (
    EmptyCorpus,
    EmptyGeneration,
    GuardExhausted,
    TemplateUnknown,
    TransportError,
)
from .index import PayloadRef, VectorIndex, build, search_topk

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


class GuardMode(enum.Enum):
    STRING_IDENTITY = "string"
    CONTENT_HASH = "hash"


@dataclass(frozen=True)
class RagConfig:
    corpus_tag: str
    k: int = 1
    guard: GuardMode = GuardMode.CONTENT_HASH
    prompt_template_id: str = "default"
    max_exemplar_units: int = 512

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class Exemplar:
    id: int
    code: str
    score: float


@dataclass(frozen=True)
class AugmentedPrompt:
    query_ref: str
    exemplars: list[Exemplar]
    rendered: str


@dataclass(frozen=True)
class RagCorpus:
    """A searchable code corpus: the vector index plus id-addressed code text."""

    tag: str
    index: VectorIndex
    codes: dict[int, str]


def _guard_key(code: str, mode: GuardMode) -> str:
    if mode is GuardMode.STRING_IDENTITY:
        return code
    # Content-hash guard compares whitespace-normalized code.
    return hashing.content_digest(" ".join(code.split()).encode("utf-8"))


def build_rag_corpus(
    pairs: Sequence[TrainingPair],
    backend: BackendConfig,
    heads: HeadPair | None,
    budget: int,
    tag: str,
    image_root: str | None = None,
) -> RagCorpus:
    """Index the positives of a training split as the exemplar corpus."""
    codes: dict[int, str] = {}
    items = []
    payload_refs: dict[int, PayloadRef] = {}
    for pair in pairs:
        item = pair.positive_item()
        if item.code is None:
            continue
        item_id = len(items)
        codes[item_id] = item.code
        payload_refs[item_id] = PayloadRef(tag, pair.row, mask_letters(item.modality_mask))
        items.append(compose_target(item, budget))
    if not items:
        raise EmptyCorpus(f"training split {tag!r} holds no code targets")
    vectors = embed_items(items, backend, image_root)
    rows = vectors_matrix(vectors).astype(np.float64)
    if heads is not None:
        rows = heads.target.project(rows)
    index = build(
        rows.astype(np.float32), list(codes), payload_refs, backend_id=backend.backend_id
    )
    return RagCorpus(tag=tag, index=index, codes=codes)


def retrieve_exemplars(
    query: ModalItem,
    corpus: RagCorpus,
    cfg: RagConfig,
    backend: BackendConfig,
    heads: HeadPair | None,
    budget: int,
    image_root: str | None = None,
    instruction: Instruction | None = None,
    guard_target: str | None = None,
) -> list[Exemplar]:
    """Top-k guarded code exemplars for a query.

    Guard drops backfill from rank k+1 onward; the list is shorter than k
    when the corpus itself is, and GuardExhausted means nothing survived.
    """
    if len(corpus.index) == 0:
        raise EmptyCorpus(f"corpus {corpus.tag!r} is empty")
    inst = instruction or instruction_for(f"q{mask_letters(query.modality_mask).lower()}→rc")
    serialized = compose_query(query, inst, budget)
    vector = embed_items([serialized], backend, image_root)[0]
    row = np.asarray(vector.values, dtype=np.float64)
    if heads is not None:
        row = heads.query.project(row)
    result = search_topk(corpus.index, row.astype(np.float32), k=len(corpus.index))
    target_key = None if guard_target is None else _guard_key(guard_target, cfg.guard)
    exemplars = []
    for item_id, item_score in result.hits:
        code = corpus.codes[item_id]
        if target_key is not None and _guard_key(code, cfg.guard) == target_key:
            continue
        exemplars.append(Exemplar(item_id, code, item_score))
        if len(exemplars) == cfg.k:
            break
    if not exemplars:
        raise GuardExhausted(f"guard removed every candidate in corpus {corpus.tag!r}")
    return exemplars


PROMPT_TEMPLATES = {
    "default": {
        "header": "Write the code that produces the result shown by the query.",
        "request": "Answer with the complete code only.",
    },
}


def build_prompt(
    query: ModalItem,
    exemplars: Sequence[Exemplar],
    template_id: str = "default",
    max_exemplar_units: int = 512,
) -> AugmentedPrompt:
    """Deterministic prompt rendering; zero exemplars yields the No-RAG prompt."""
    if template_id not in PROMPT_TEMPLATES:
        raise TemplateUnknown(f"unknown prompt template {template_id!r}")
    template = PROMPT_TEMPLATES[template_id]
    blocks = [template["header"]]
    for rank, ex in enumerate(exemplars, start=1):
        code = truncate_units(ex.code, max_exemplar_units)
        blocks.append(f"Reference implementation {rank}:\n```\n{code}\n```")
    if query.text is not None:
        blocks.append(f"Query description:\n{query.text}")
    if query.image_ref is not None:
        blocks.append("Query image:\n[image]")
    if query.code is not None:
        blocks.append(f"Query code:\n```\n{query.code}\n```")
    blocks.append(template["request"])
    rendered = "\n\n".join(blocks)
    query_ref = hashing.content_digest(rendered.encode("utf-8"))[:16]
    return AugmentedPrompt(query_ref=query_ref, exemplars=list(exemplars), rendered=rendered)


def extract_fenced_code(text: str) -> str:
    match = _FENCE_RE.search(text)
    return match.group(1) if match else text


def generate(
    prompt: AugmentedPrompt,
    endpoint: str,
    model_id: str = "",
    max_new_tokens: int = 1024,
    image_path: str | None = None,
    extract_fence: bool = False,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[str, dict]:
    """Send a prompt to a generation endpoint; returns (text, run metadata)."""
    import requests

    payload = {
        "model": model_id,
        "prompt": prompt.rendered,
        "image_path": image_path,
        "max_new_tokens": max_new_tokens,
    }
    last: Exception | None = None
    body = None
    for attempt in range(3):
        try:
            resp = requests.post(endpoint, json=payload, timeout=60)
            resp.raise_for_status()
            body = resp.json()
            break
        except Exception as exc:  # noqa: BLE001 - every failure is retryable here
            last = exc
            sleep(0.2 * 2**attempt)
    if body is None:
        raise TransportError(f"generation endpoint unreachable after 3 attempts: {last}")
    text = body.get("text", "")
    if not text:
        raise EmptyGeneration("generation endpoint returned empty text")
    if extract_fence:
        text = extract_fenced_code(text)
    meta = {
        "model": model_id,
        "prompt_hash": hashing.content_digest(prompt.rendered.encode("utf-8")),
        "exemplar_ids": [ex.id for ex in prompt.exemplars],
        "timestamp": time.time(),
    }
    return text, meta

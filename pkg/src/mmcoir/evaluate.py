"""End-to-end retrieval evaluation over four-key eval pairs.

Each task builds its candidate pool from the task's own targets,
deduplicated by serialized content hash (query relevance follows the dedup
representative), embeds every query with its instruction, records the exact
tie-rule rank of the query's own target, and averages the metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import hashing
from .align import HeadPair, ScoringConfig
from .corpus import (
    EvalPair,
    compose_query,
    compose_target,
    instruction_for,
    mask_letters,
)
from .embedder import BackendConfig, embed_items, read_image_bytes, vectors_matrix
from .errors import ConfigError, EngineError
from .index import PayloadRef, build, rank_of
from .metrics import CSV_HEADER, MetricsReport, macro_average, report_from_ranks

DEFAULT_BUDGETS = (128, 256, 512)


def fingerprint(
    backend: BackendConfig,
    heads: HeadPair | None,
    scoring: ScoringConfig,
    budget: int,
    seed: int,
    extra: str = "",
) -> str:
    """Short stable digest of everything that determines a report's values."""
    head_part = "none"
    if heads is not None:
        head_part = hashing.content_digest(
            heads.query.weights.tobytes(),
            heads.target.weights.tobytes(),
            heads.query.bias.tobytes() if heads.query.bias is not None else b"",
            heads.target.bias.tobytes() if heads.target.bias is not None else b"",
        )
    return hashing.content_digest(
        backend.backend_id.encode(),
        str(backend.dim).encode(),
        head_part.encode(),
        str(budget).encode(),
        repr(scoring.tau).encode(),
        str(seed).encode(),
        extra.encode(),
    )[:16]


def _target_key(pair: EvalPair, budget: int, image_root: str | None) -> str:
    serialized = compose_target(pair.target_item(), budget)
    image_digest = "-"
    if serialized.image_ref is not None:
        image_digest = hashing.content_digest(read_image_bytes(serialized.image_ref, image_root))
    return hashing.content_digest(serialized.canonical_text.encode("utf-8"), image_digest.encode())


@dataclass(frozen=True)
class TaskRun:
    """Per-task evaluation outcome: the report plus raw ranks for debugging."""

    report: MetricsReport
    ranks: list[int | None]


@dataclass
class CandidatePool:
    """Deduplicated target pool shared by one or more tasks."""

    key_to_id: dict[str, int]
    items: list
    payload_refs: dict[int, PayloadRef]

    @classmethod
    def empty(cls) -> "CandidatePool":
        return cls({}, [], {})

    def add_targets(self, pairs: Sequence[EvalPair], budget: int, image_root: str | None):
        for pair in pairs:
            key = _target_key(pair, budget, image_root)
            if key in self.key_to_id:
                continue
            self.key_to_id[key] = len(self.items)
            item = pair.target_item()
            self.payload_refs[len(self.items)] = PayloadRef(
                pair.dataset_tag, pair.row, mask_letters(item.modality_mask)
            )
            self.items.append(compose_target(item, budget))

    def build_index(self, backend: BackendConfig, heads: HeadPair | None, image_root):
        vectors = embed_items(self.items, backend, image_root)
        rows = vectors_matrix(vectors).astype(np.float64)
        if heads is not None:
            rows = heads.target.project(rows)
        return build(
            rows.astype(np.float32),
            list(range(len(self.items))),
            self.payload_refs,
            backend_id=backend.backend_id,
        )


def evaluate_task(
    pairs: Sequence[EvalPair],
    backend: BackendConfig,
    heads: HeadPair | None,
    scoring: ScoringConfig,
    budget: int,
    image_root: str | None = None,
    add_instruction: bool = False,
    seed: int = 0,
    shared_pool: tuple[CandidatePool, object] | None = None,
) -> TaskRun:
    """Run one (dataset, task) evaluation and compute its metrics.

    ``add_instruction`` prepends the direction's standard template; leave it
    off for datasets whose query text already embeds the instruction.  A
    ``shared_pool`` (pool, index) ranks queries against a merged candidate
    set instead of the task's own targets.
    """
    if not pairs:
        raise ConfigError("evaluate_task needs at least one pair")
    dataset_tag = pairs[0].dataset_tag
    task_tag = pairs[0].task_tag

    if shared_pool is None:
        pool = CandidatePool.empty()
        pool.add_targets(pairs, budget, image_root)
        idx = pool.build_index(backend, heads, image_root)
    else:
        pool, idx = shared_pool
    relevant = [pool.key_to_id[_target_key(p, budget, image_root)] for p in pairs]

    query_items = []
    for pair in pairs:
        item = pair.query_item()
        if add_instruction:
            query_items.append(compose_query(item, instruction_for(task_tag), budget))
        else:
            query_items.append(compose_target(item, budget))
    query_vectors = embed_items(query_items, backend, image_root)
    query_rows = vectors_matrix(query_vectors).astype(np.float64)
    if heads is not None:
        query_rows = heads.query.project(query_rows)
    query_rows = query_rows.astype(np.float32)

    ranks: list[int | None] = []
    for i, pair in enumerate(pairs):
        try:
            ranks.append(rank_of(idx, query_rows[i], relevant[i]))
        except EngineError as exc:
            raise type(exc)(f"query row {pair.row}: {exc}") from exc

    pool_label = "merged" if shared_pool is not None else "per-task"
    fp = fingerprint(
        backend, heads, scoring, budget, seed, extra=f"{dataset_tag}/{task_tag}/{pool_label}"
    )
    return TaskRun(report_from_ranks(ranks, dataset_tag, task_tag, fp), ranks)


@dataclass(frozen=True)
class ManifestEntry:
    dataset_tag: str
    task_tag: str
    path: Path
    add_instruction: bool = False


def evaluate_suite(
    entries: Sequence[ManifestEntry],
    backend: BackendConfig,
    heads: HeadPair | None,
    scoring: ScoringConfig,
    budget: int,
    image_root: str | None = None,
    seed: int = 0,
    merge_pools: bool = False,
) -> list[MetricsReport]:
    """Evaluate every manifest row; append the unweighted macro average.

    With ``merge_pools`` every query ranks against the union of all rows'
    targets (the stricter cross-task setting) instead of its own task's pool.
    """
    from .corpus import ingest_eval

    missing = [str(e.path) for e in entries if not e.path.exists()]
    if missing:
        raise ConfigError(f"manifest rows reference missing files: {missing}")
    per_task = []
    for entry in entries:
        with open(entry.path, encoding="utf-8") as fh:
            per_task.append(ingest_eval(fh, entry.task_tag, entry.dataset_tag))

    shared_pool = None
    if merge_pools:
        pool = CandidatePool.empty()
        for pairs in per_task:
            pool.add_targets(pairs, budget, image_root)
        shared_pool = (pool, pool.build_index(backend, heads, image_root))

    reports = []
    for entry, pairs in zip(entries, per_task):
        run = evaluate_task(
            pairs,
            backend,
            heads,
            scoring,
            budget,
            image_root=image_root,
            add_instruction=entry.add_instruction,
            seed=seed,
            shared_pool=shared_pool,
        )
        reports.append(run.report)
    fp = fingerprint(backend, heads, scoring, budget, seed,
                     extra="suite-merged" if merge_pools else "suite")
    reports.append(macro_average(reports, fp))
    return reports


def length_ablation(
    pairs: Sequence[EvalPair],
    backend: BackendConfig,
    heads: HeadPair | None,
    scoring: ScoringConfig,
    budgets: Sequence[int] = DEFAULT_BUDGETS,
    image_root: str | None = None,
    add_instruction: bool = False,
    seed: int = 0,
) -> dict[int, MetricsReport]:
    """One full evaluation per token budget (the sequence-length ablation)."""
    if not budgets:
        raise ConfigError("length ablation needs at least one budget")
    out = {}
    for budget in budgets:
        run = evaluate_task(
            pairs,
            _with_budget(backend, budget),
            heads,
            scoring,
            budget,
            image_root=image_root,
            add_instruction=add_instruction,
            seed=seed,
        )
        out[budget] = run.report
    return out


def _with_budget(backend: BackendConfig, budget: int) -> BackendConfig:
    from dataclasses import replace

    return replace(backend, token_budget=budget)


def reports_to_csv(reports: Sequence[MetricsReport]) -> str:
    return "\n".join([CSV_HEADER] + [r.csv_row() for r in reports]) + "\n"


def reports_to_json(reports: Sequence[MetricsReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"

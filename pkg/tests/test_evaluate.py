"""Task evaluation, pooling/dedup, suites, and the length ablation."""

from __future__ import annotations

import json

import numpy as np
import pytest

from oracles import brute_force_rank
from mmcoir import synthetic
from mmcoir.align import ScoringConfig
from mmcoir.corpus import ingest_eval
from mmcoir.embedder import BackendConfig, BackendKind
from mmcoir.errors import ConfigError
from mmcoir.evaluate import (
    ManifestEntry,
    evaluate_suite,
    evaluate_task,
    length_ablation,
    reports_to_csv,
    reports_to_json,
)

SCORING = ScoringConfig()


def eval_rows(n, query=lambda i: f"query {i}", target=lambda i: f"target {i}"):
    return [json.dumps({"qry_text": query(i), "tgt_text": target(i)}) for i in range(n)]


def pairs_of(rows, task="qt→rc", dataset="d"):
    return ingest_eval(rows, task, dataset)


@pytest.fixture
def backend():
    return BackendConfig(kind=BackendKind.BUILTIN_HASH, dim=64)


class TestEvaluateTask:
    def test_self_retrievable_pool_is_perfect(self, backend):
        # Query text equals target text: every query's nearest neighbour is
        # its own target by construction.
        rows = eval_rows(10, query=lambda i: f"snippet {i}", target=lambda i: f"snippet {i}")
        run = evaluate_task(pairs_of(rows), backend, None, SCORING, 256)
        assert run.report.hit_at[1] == 1.0
        assert run.report.ndcg_at[10] == 1.0
        assert run.report.n_queries == 10

    def test_pool_dedup_keeps_metrics(self, backend):
        rows = eval_rows(8)
        base = evaluate_task(pairs_of(rows), backend, None, SCORING, 256)
        doubled = evaluate_task(pairs_of(rows + rows), backend, None, SCORING, 256)
        assert doubled.ranks == base.ranks * 2  # pool identical after dedup
        assert doubled.report.hit_at[1] == pytest.approx(base.report.hit_at[1], abs=1e-12)
        assert doubled.report.mrr == pytest.approx(base.report.mrr, abs=1e-12)

    def test_constant_backend_follows_tie_rule(self, backend, monkeypatch):
        # All-equal scores: the lowest pool id wins every query, which the
        # brute-force oracle confirms.
        from mmcoir import evaluate as evaluate_mod

        rows = eval_rows(6)
        pairs = pairs_of(rows)

        constant = np.zeros(64, dtype=np.float32)
        constant[0] = 1.0

        real = evaluate_mod.embed_items

        def constant_embed(items, cfg, root=None):
            out = real(items, cfg, root)
            from mmcoir.embedder import EmbeddingVector
            return [EmbeddingVector(constant.copy(), cfg.dim, v.backend_id) for v in out]

        monkeypatch.setattr(evaluate_mod, "embed_items", constant_embed)
        run = evaluate_task(pairs, backend, None, SCORING, 256)
        rows_mat = np.stack([constant] * 6)
        expected = [
            brute_force_rank(rows_mat, np.arange(6, dtype=np.uint64), constant, i)
            for i in range(6)
        ]
        assert run.ranks == expected
        assert run.report.hit_at[1] == pytest.approx(1 / 6)

    def test_empty_task_rejected(self, backend):
        with pytest.raises(ConfigError):
            evaluate_task([], backend, None, SCORING, 256)

    def test_deterministic_report(self, backend):
        rows = eval_rows(12)
        a = evaluate_task(pairs_of(rows), backend, None, SCORING, 256)
        b = evaluate_task(pairs_of(rows), backend, None, SCORING, 256)
        assert a.report == b.report


class TestSuite:
    def test_macro_average(self, backend, tmp_path):
        perfect = tmp_path / "perfect.jsonl"
        perfect.write_text(
            "\n".join(eval_rows(4, query=lambda i: f"same {i}", target=lambda i: f"same {i}"))
            + "\n"
        )
        entries = [
            ManifestEntry("a", "qt→rc", perfect),
            ManifestEntry("b", "qt→rc", perfect),
        ]
        reports = evaluate_suite(entries, backend, None, SCORING, 256)
        assert len(reports) == 3
        assert reports[-1].dataset_tag == "ALL"
        assert reports[-1].hit_at[1] == pytest.approx(1.0)

    def test_missing_file_aborts_with_row(self, backend, tmp_path):
        entries = [ManifestEntry("a", "qt→rc", tmp_path / "absent.jsonl")]
        with pytest.raises(ConfigError, match="absent.jsonl"):
            evaluate_suite(entries, backend, None, SCORING, 256)

    def test_rerun_byte_identical(self, backend, tmp_path):
        f = tmp_path / "t.jsonl"
        f.write_text("\n".join(eval_rows(5)) + "\n")
        entries = [ManifestEntry("a", "qt→rc", f)]
        r1 = evaluate_suite(entries, backend, None, SCORING, 256)
        r2 = evaluate_suite(entries, backend, None, SCORING, 256)
        assert reports_to_csv(r1) == reports_to_csv(r2)
        assert reports_to_json(r1) == reports_to_json(r2)

    def test_merged_pools_are_no_easier(self, backend, tmp_path):
        # Merged pools add cross-task distractors, so per-task metrics can
        # only stay equal or drop.
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        a.write_text("\n".join(eval_rows(6, target=lambda i: f"code a{i}")) + "\n")
        b.write_text("\n".join(eval_rows(6, target=lambda i: f"code b{i}")) + "\n")
        entries = [ManifestEntry("a", "qt→rc", a), ManifestEntry("b", "qt→rc", b)]
        per_task = evaluate_suite(entries, backend, None, SCORING, 256)
        merged = evaluate_suite(entries, backend, None, SCORING, 256, merge_pools=True)
        for pt, mg in zip(per_task[:-1], merged[:-1]):
            assert mg.hit_at[10] <= pt.hit_at[10] + 1e-12
            assert mg.mrr <= pt.mrr + 1e-12
        assert per_task[-1].fingerprint != merged[-1].fingerprint


class TestLengthAblation:
    def test_short_items_budget_invariant(self, backend):
        rows = eval_rows(6)  # every item far below 128 units
        pairs = pairs_of(rows)
        reports = length_ablation(pairs, backend, None, SCORING, budgets=(128, 256, 512))
        values = {
            (r.hit_at[1], r.ndcg_at[10], r.mrr) for r in reports.values()
        }
        assert len(values) == 1

    def test_planted_position_orders_budgets(self):
        backend = BackendConfig(kind=BackendKind.BUILTIN_HASH, dim=1024)
        rows = [json.dumps(r) for r in synthetic.position_dataset(n=32, seed=5)]
        pairs = pairs_of(rows, dataset="position")
        reports = length_ablation(pairs, backend, None, SCORING, budgets=(256, 512))
        assert reports[512].hit_at[1] > reports[256].hit_at[1]
        assert reports[512].ndcg_at[10] > reports[256].ndcg_at[10]

    def test_empty_budgets_rejected(self, backend):
        with pytest.raises(ConfigError):
            length_ablation(pairs_of(eval_rows(2)), backend, None, SCORING, budgets=())


@pytest.mark.skipif(
    __import__("mmcoir").KERNEL_BACKEND != "cython",
    reason="throughput budget holds for the compiled kernels",
)
def test_two_thousand_pair_task_under_ten_seconds():
    import time

    rows = eval_rows(
        2000,
        query=lambda i: f"query text number {i} with several words",
        target=lambda i: f"def target_{i}():\n    return compute({i})",
    )
    pairs = pairs_of(rows, dataset="synth")
    backend = BackendConfig(kind=BackendKind.BUILTIN_HASH, dim=256)
    start = time.monotonic()
    run = evaluate_task(pairs, backend, None, SCORING, 256)
    elapsed = time.monotonic() - start
    assert run.report.n_queries == 2000
    assert elapsed < 10.0, f"took {elapsed:.1f}s"

"""Rank-based IR metrics under the single-relevant-target model.

``rank`` is the 1-based position of the one relevant target, or None when it
is outside the pool.  With binary gain and one relevant item, IDCG is 1 and
recall@k coincides with hit@k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

HIT_KS = (1, 5, 10)
NDCG_KS = (10,)
RECALL_KS = (10,)

CSV_HEADER = "dataset,task,n,hit@1,hit@5,hit@10,ndcg@10,mrr,recall@10,fingerprint"


def hit_at_k(rank: int | None, k: int) -> float:
    return 1.0 if rank is not None and rank <= k else 0.0


def ndcg_at_k(rank: int | None, k: int) -> float:
    if rank is None or rank > k:
        return 0.0
    return 1.0 / math.log2(rank + 1)


def mrr(rank: int | None) -> float:
    return 1.0 / rank if rank is not None else 0.0


def recall_at_k(rank: int | None, k: int) -> float:
    return hit_at_k(rank, k)


@dataclass(frozen=True)
class MetricsReport:
    dataset_tag: str
    task_tag: str
    n_queries: int
    hit_at: dict[int, float]
    ndcg_at: dict[int, float]
    mrr: float
    recall_at: dict[int, float]
    fingerprint: str

    def csv_row(self) -> str:
        return ",".join(
            [
                self.dataset_tag,
                self.task_tag,
                str(self.n_queries),
                _fmt(self.hit_at[1]),
                _fmt(self.hit_at[5]),
                _fmt(self.hit_at[10]),
                _fmt(self.ndcg_at[10]),
                _fmt(self.mrr),
                _fmt(self.recall_at[10]),
                self.fingerprint,
            ]
        )

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset_tag,
            "task": self.task_tag,
            "n": self.n_queries,
            "hit@1": _num(self.hit_at[1]),
            "hit@5": _num(self.hit_at[5]),
            "hit@10": _num(self.hit_at[10]),
            "ndcg@10": _num(self.ndcg_at[10]),
            "mrr": _num(self.mrr),
            "recall@10": _num(self.recall_at[10]),
            "fingerprint": self.fingerprint,
        }


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _num(value: float) -> float:
    # The JSON twin carries the same 6-decimal values as the CSV.
    return float(_fmt(value))


def report_from_ranks(
    ranks: Sequence[int | None],
    dataset_tag: str,
    task_tag: str,
    fingerprint: str,
) -> MetricsReport:
    """Average the per-query metrics over a task's recorded ranks."""
    if not ranks:
        raise ValueError("cannot report on zero queries")
    n = len(ranks)
    return MetricsReport(
        dataset_tag=dataset_tag,
        task_tag=task_tag,
        n_queries=n,
        hit_at={k: sum(hit_at_k(r, k) for r in ranks) / n for k in HIT_KS},
        ndcg_at={k: sum(ndcg_at_k(r, k) for r in ranks) / n for k in NDCG_KS},
        mrr=sum(mrr(r) for r in ranks) / n,
        recall_at={k: sum(recall_at_k(r, k) for r in ranks) / n for k in RECALL_KS},
        fingerprint=fingerprint,
    )


def macro_average(reports: Sequence[MetricsReport], fingerprint: str) -> MetricsReport:
    """Unweighted mean over task reports (the suite aggregate row)."""
    if not reports:
        raise ValueError("cannot average zero reports")
    n = len(reports)
    return MetricsReport(
        dataset_tag="ALL",
        task_tag="macro-avg",
        n_queries=sum(r.n_queries for r in reports),
        hit_at={k: sum(r.hit_at[k] for r in reports) / n for k in HIT_KS},
        ndcg_at={k: sum(r.ndcg_at[k] for r in reports) / n for k in NDCG_KS},
        mrr=sum(r.mrr for r in reports) / n,
        recall_at={k: sum(r.recall_at[k] for r in reports) / n for k in RECALL_KS},
        fingerprint=fingerprint,
    )

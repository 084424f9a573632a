"""Independent reference implementations used as test oracles.

Everything here is written straight from definitions, sharing no code with
the engine paths it checks: metrics from the DCG/RR formulas, ranking via a
full NumPy double-precision sort, and gradients via central finite
differences of the engine's loss.
"""

from __future__ import annotations

import math

import numpy as np

from mmcoir import align


def oracle_hit(rank, k):
    if rank is None:
        return 0.0
    return 1.0 if rank <= k else 0.0


def oracle_ndcg(rank, k):
    # DCG of a single relevant item at `rank` with binary gain; IDCG = 1.
    if rank is None or rank > k:
        return 0.0
    dcg = 0.0
    for position in range(1, k + 1):
        gain = 1.0 if position == rank else 0.0
        dcg += gain / math.log2(position + 1)
    return dcg / 1.0


def oracle_mrr(rank):
    if rank is None:
        return 0.0
    return 1.0 / rank


def oracle_recall(rank, k):
    # One relevant item total: recall@k = relevant-found / 1.
    if rank is None:
        return 0.0
    return 1.0 if rank <= k else 0.0


def brute_force_topk(rows: np.ndarray, ids: np.ndarray, query: np.ndarray, k: int,
                     exclude: set[int] | None = None) -> list[tuple[int, float]]:
    """Full double-precision scoring plus a lexicographic sort."""
    scores = rows.astype(np.float64) @ query.astype(np.float64)
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    out = []
    for i in order:
        if exclude and int(ids[i]) in exclude:
            continue
        out.append((int(ids[i]), float(scores[i])))
        if len(out) == k:
            break
    return out


def brute_force_rank(rows: np.ndarray, ids: np.ndarray, query: np.ndarray,
                     target_id: int) -> int | None:
    hits = brute_force_topk(rows, ids, query, k=len(ids))
    for position, (item_id, _) in enumerate(hits, start=1):
        if item_id == target_id:
            return position
    return None


def finite_difference_grads(batch, heads, tau, h=1e-5):
    """Central differences of the engine loss over every free parameter."""
    params = [heads.query.weights]
    if heads.query.bias is not None:
        params.append(heads.query.bias)
    if not heads.is_shared:
        params.append(heads.target.weights)
        if heads.target.bias is not None:
            params.append(heads.target.bias)
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + h
            loss_plus = align.infonce_loss(batch, heads, tau)
            p[i] = orig - h
            loss_minus = align.infonce_loss(batch, heads, tau)
            p[i] = orig
            g[i] = (loss_plus - loss_minus) / (2 * h)
            it.iternext()
        grads.append(g)
    return grads


def analytic_grads_list(batch, heads, tau):
    """Engine gradients flattened in the same order as the FD oracle."""
    grad = align.infonce_grad(batch, heads, tau)
    if heads.is_shared:
        combined = grad.combined()
        out = [combined.weights]
        if heads.query.bias is not None:
            out.append(combined.bias)
        return out
    out = [grad.query.weights]
    if heads.query.bias is not None:
        out.append(grad.query.bias)
    out.append(grad.target.weights)
    if heads.target.bias is not None:
        out.append(grad.target.bias)
    return out


def max_relative_error(analytic, numeric) -> float:
    # The 1e-8 floor keeps fully-saturated instances (true gradient ~ 0, FD
    # difference underflows) from dividing by zero; real disagreements are
    # comparable to the gradient scale and stay caught.
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(float(np.abs(n).max()), float(np.abs(a).max()), 1e-8)
        worst = max(worst, float(np.abs(a - n).max()) / scale)
    return worst

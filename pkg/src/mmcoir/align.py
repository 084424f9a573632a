"""Contrastive alignment of projection heads over frozen embeddings.

The trainable unit is a linear map (optionally with bias) whose output is
l2-normalized; queries and targets get separate heads by default, one shared
head behind a flag.  The objective is temperature-scaled InfoNCE where each
query contrasts its positive against the other in-batch positives plus its
own hard negatives.  All accumulation is float64 and the loss is evaluated
in log space, so tau=0.02 never overflows.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedder import EmbeddingVector
from .errors import ConfigError, CorruptIndex, DegenerateBatch, DimMismatch, NonFiniteLoss
from .index import PayloadRef, VectorIndex, build, search_topk

HEAD_MAGIC = b"MMCOIR-HEAD"

_FLAG_BIAS = 1
_FLAG_SHARED = 2


@dataclass
class ProjectionHead:
    """Linear map with l2-normalized output: h = (W^T x + b) / ||.||."""

    weights: np.ndarray  # (d_in, d_out) float64
    bias: np.ndarray | None = None
    shared: bool = False
    seed: int = 0
    step: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigError(f"head weights must be 2-d, got shape {self.weights.shape}")
        if not np.isfinite(self.weights).all():
            raise ConfigError("head weights must be finite")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weights.shape[1],):
                raise ConfigError("bias shape does not match d_out")

    @property
    def d_in(self) -> int:
        return self.weights.shape[0]

    @property
    def d_out(self) -> int:
        return self.weights.shape[1]

    def project(self, x: np.ndarray) -> np.ndarray:
        """Project rows and l2-normalize; accepts (n, d_in) or (d_in,)."""
        single = x.ndim == 1
        rows = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = rows @ self.weights
        if self.bias is not None:
            z = z + self.bias
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        if (norms == 0).any():
            raise ValueError("projection collapsed a row to zero")
        out = z / norms
        return out[0] if single else out


@dataclass(frozen=True)
class HeadPair:
    """Query and target heads; the same object twice in the shared setting."""

    query: ProjectionHead
    target: ProjectionHead

    @property
    def is_shared(self) -> bool:
        return self.query is self.target


def as_head_pair(head: ProjectionHead | HeadPair) -> HeadPair:
    if isinstance(head, HeadPair):
        return head
    return HeadPair(head, head)


def init_head(d_in: int, d_out: int, seed: int, shared: bool = False, bias: bool = False) -> ProjectionHead:
    """Identity-padded matrix plus small uniform noise, deterministic in seed."""
    rng = np.random.default_rng(seed)
    w = np.zeros((d_in, d_out))
    k = min(d_in, d_out)
    w[:k, :k] = np.eye(k)
    w += rng.uniform(-1e-3, 1e-3, size=(d_in, d_out))
    b = np.zeros(d_out) if bias else None
    return ProjectionHead(weights=w, bias=b, shared=shared, seed=seed)


def init_head_pair(d_in: int, d_out: int, seed: int, shared: bool = False, bias: bool = False) -> HeadPair:
    query = init_head(d_in, d_out, seed, shared=shared, bias=bias)
    if shared:
        return HeadPair(query, query)
    # Distinct stream for the target head so the two inits are independent.
    return HeadPair(query, init_head(d_in, d_out, seed + 1, shared=False, bias=bias))


@dataclass(frozen=True)
class ScoringConfig:
    tau: float = 0.02

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")


class Optimizer(enum.Enum):
    ADAM_LIKE = "adam"
    SGD = "sgd"


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 5e-5
    warmup_steps: int = 100
    total_steps: int = 1000
    batch_size: int = 64
    seed: int = 0
    optimizer: Optimizer = Optimizer.ADAM_LIKE
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    shared_head: bool = False
    d_out: int | None = None  # default: same as input dim
    checkpoint_every: int = 0  # 0 = final checkpoint only
    mined_negatives: int = 0  # hard negatives mined per query per epoch

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.warmup_steps > self.total_steps:
            raise ConfigError("warmup_steps must not exceed total_steps")


@dataclass
class TrainingBatch:
    """Pre-projection embedding rows for one step.

    ``hard_negatives[i]`` holds row i's extra negatives beyond the other
    in-batch positives; it may be empty.
    """

    queries: np.ndarray  # (B, d)
    positives: np.ndarray  # (B, d)
    hard_negatives: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.float64)
        self.positives = np.asarray(self.positives, dtype=np.float64)
        if self.queries.shape != self.positives.shape:
            raise DimMismatch("queries and positives must have identical shapes")
        if not self.hard_negatives:
            self.hard_negatives = [
                np.empty((0, self.queries.shape[1])) for _ in range(len(self.queries))
            ]
        if len(self.hard_negatives) != len(self.queries):
            raise DimMismatch("one hard-negative list per row required")
        self.hard_negatives = [
            np.asarray(h, dtype=np.float64).reshape(-1, self.queries.shape[1])
            for h in self.hard_negatives
        ]
        if len(self.queries) == 1 and self.hard_negatives[0].shape[0] == 0:
            raise DegenerateBatch("B=1 with no hard negatives leaves no contrast")


def score(hq: EmbeddingVector | np.ndarray, hr: EmbeddingVector | np.ndarray, tau: float) -> float:
    """Temperature-scaled similarity: exp(hq . hr / tau)."""
    a = np.asarray(hq.values if isinstance(hq, EmbeddingVector) else hq, dtype=np.float64)
    b = np.asarray(hr.values if isinstance(hr, EmbeddingVector) else hr, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"score on shapes {a.shape} vs {b.shape}")
    return float(np.exp(float(a @ b) / tau))


def _logsumexp(row: np.ndarray) -> float:
    m = row.max()
    return float(m + math.log(np.exp(row - m).sum()))


def _forward(batch: TrainingBatch, heads: HeadPair, tau: float):
    """Project and score; returns everything the backward pass needs."""
    b = len(batch.queries)
    zq = batch.queries @ heads.query.weights
    if heads.query.bias is not None:
        zq = zq + heads.query.bias
    nq = np.linalg.norm(zq, axis=1, keepdims=True)
    pq = zq / nq

    targets = np.vstack([batch.positives] + [h for h in batch.hard_negatives if len(h)])
    zr = targets @ heads.target.weights
    if heads.target.bias is not None:
        zr = zr + heads.target.bias
    nr = np.linalg.norm(zr, axis=1, keepdims=True)
    pr = zr / nr

    sims = pq @ pr.T  # (B, B + total hard)
    # Column layout: first B columns are in-batch positives, then each row's
    # hard negatives in row order.
    losses = np.empty(b)
    probs = np.zeros_like(sims)
    start = b
    for i in range(b):
        n_hard = len(batch.hard_negatives[i])
        cols = list(range(b)) + list(range(start, start + n_hard))
        start += n_hard
        logits = sims[i, cols] / tau
        lse = _logsumexp(logits)
        losses[i] = lse - logits[i]
        probs[i, cols] = np.exp(logits - lse)
    return pq, zq, nq, pr, zr, nr, targets, probs, losses


def infonce_loss(batch: TrainingBatch, head: ProjectionHead | HeadPair, tau: float) -> float:
    """Mean InfoNCE over the batch, evaluated in log space."""
    heads = as_head_pair(head)
    *_, losses = _forward(batch, heads, tau)
    return float(losses.mean())


@dataclass
class HeadGrad:
    weights: np.ndarray
    bias: np.ndarray | None


@dataclass
class PairGrad:
    query: HeadGrad
    target: HeadGrad

    def combined(self) -> HeadGrad:
        """Gradient w.r.t. the single parameter set of a shared head."""
        bias = None
        if self.query.bias is not None:
            bias = self.query.bias + self.target.bias
        return HeadGrad(self.query.weights + self.target.weights, bias)


def _norm_backward(dp: np.ndarray, p: np.ndarray, norms: np.ndarray) -> np.ndarray:
    return (dp - p * np.sum(dp * p, axis=1, keepdims=True)) / norms


def infonce_grad(batch: TrainingBatch, head: ProjectionHead | HeadPair, tau: float) -> PairGrad:
    """Analytic gradient of :func:`infonce_loss` w.r.t. both heads' parameters."""
    heads = as_head_pair(head)
    b = len(batch.queries)
    pq, zq, nq, pr, zr, nr, targets, probs, _ = _forward(batch, heads, tau)

    coeff = probs.copy()
    coeff[np.arange(b), np.arange(b)] -= 1.0
    coeff /= b * tau

    dpq = coeff @ pr
    dpr = coeff.T @ pq

    dzq = _norm_backward(dpq, pq, nq)
    dzr = _norm_backward(dpr, pr, nr)

    gwq = batch.queries.T @ dzq
    gbq = dzq.sum(axis=0) if heads.query.bias is not None else None
    gwr = targets.T @ dzr
    gbr = dzr.sum(axis=0) if heads.target.bias is not None else None
    return PairGrad(HeadGrad(gwq, gbq), HeadGrad(gwr, gbr))


def mine_hard_negatives(
    queries: np.ndarray,
    corpus_index: VectorIndex,
    k: int,
    exclusion: Sequence[set[int]],
    head: ProjectionHead | HeadPair | None = None,
) -> list[list[int]]:
    """Top-k corpus ids nearest each projected query, positives excluded."""
    if k == 0:
        return [[] for _ in range(len(queries))]
    projected = as_head_pair(head).query.project(queries) if head is not None else queries
    out = []
    for i, row in enumerate(np.atleast_2d(projected)):
        result = search_topk(
            corpus_index, row.astype(np.float32), k, exclude=exclusion[i] if exclusion else None
        )
        out.append([hit_id for hit_id, _ in result.hits])
    return out


def linear_lr(step: int, cfg: TrainerConfig) -> float:
    """Linear warmup to the base rate, then linear decay to zero."""
    if step < cfg.warmup_steps:
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps
    remaining = cfg.total_steps - step
    return cfg.learning_rate * max(0.0, remaining / max(1, cfg.total_steps - cfg.warmup_steps))


class _AdamState:
    def __init__(self, shape: tuple[int, ...]):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def update(self, params: np.ndarray, grad: np.ndarray, lr: float, t: int, cfg: TrainerConfig):
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1**t)
        v_hat = self.v / (1 - b2**t)
        params -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


class _HeadOptimizer:
    def __init__(self, head: ProjectionHead, cfg: TrainerConfig):
        self.head = head
        self.cfg = cfg
        if cfg.optimizer is Optimizer.ADAM_LIKE:
            self.w_state = _AdamState(head.weights.shape)
            self.b_state = _AdamState(head.bias.shape) if head.bias is not None else None

    def step(self, grad: HeadGrad, lr: float, t: int):
        if self.cfg.optimizer is Optimizer.SGD:
            self.head.weights -= lr * grad.weights
            if self.head.bias is not None and grad.bias is not None:
                self.head.bias -= lr * grad.bias
        else:
            self.w_state.update(self.head.weights, grad.weights, lr, t, self.cfg)
            if self.b_state is not None and grad.bias is not None:
                self.b_state.update(self.head.bias, grad.bias, lr, t, self.cfg)


def train_heads(
    query_rows: np.ndarray,
    positive_rows: np.ndarray,
    cfg: TrainerConfig,
    scoring: ScoringConfig,
    hard_negative_rows: Sequence[np.ndarray] | None = None,
    head_init: HeadPair | None = None,
    checkpoint_dir: str | Path | None = None,
) -> tuple[HeadPair, list[tuple[int, float]]]:
    """Run the InfoNCE loop over pre-computed embeddings.

    Deterministic in ``cfg.seed``: batch order, head init and every f64
    reduction are fixed, so two runs produce bitwise-identical loss curves.
    """
    n, d = query_rows.shape
    if n < 2:
        raise DegenerateBatch("training needs at least two pairs")
    if positive_rows.shape != query_rows.shape:
        raise DimMismatch("positives must align with queries")
    d_out = cfg.d_out or d
    heads = head_init or init_head_pair(d, d_out, cfg.seed, shared=cfg.shared_head)
    opt_q = _HeadOptimizer(heads.query, cfg)
    opt_r = opt_q if heads.is_shared else _HeadOptimizer(heads.target, cfg)

    mined: list[list[int]] | None = None

    def refresh_mined():
        # Mined once per epoch under the current head, over the positives.
        projected = heads.target.project(positive_rows).astype(np.float32)
        refs = {i: PayloadRef("train", i, "C") for i in range(n)}
        corpus_index = build(projected, list(range(n)), refs, backend_id="train")
        return mine_hard_negatives(
            query_rows, corpus_index, cfg.mined_negatives, [{i} for i in range(n)], heads
        )

    if cfg.mined_negatives > 0:
        mined = refresh_mined()

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    pos = 0
    curve: list[tuple[int, float]] = []
    for step in range(cfg.total_steps):
        take = min(cfg.batch_size, n)
        if pos + take > n:
            order = rng.permutation(n)
            pos = 0
            if cfg.mined_negatives > 0:
                mined = refresh_mined()
        idx = order[pos : pos + take]
        pos += take
        hard = None
        if hard_negative_rows is not None or mined is not None:
            hard = []
            for i in idx:
                parts = []
                if hard_negative_rows is not None and len(hard_negative_rows[i]):
                    parts.append(np.asarray(hard_negative_rows[i]))
                if mined is not None and mined[i]:
                    parts.append(positive_rows[mined[i]])
                hard.append(np.vstack(parts) if parts else np.empty((0, d)))
        batch = TrainingBatch(query_rows[idx], positive_rows[idx], hard or [])

        loss = infonce_loss(batch, heads, scoring.tau)
        if not math.isfinite(loss):
            raise NonFiniteLoss(step, loss)
        curve.append((step, loss))

        grad = infonce_grad(batch, heads, scoring.tau)
        lr = linear_lr(step, cfg)
        t = step + 1
        if heads.is_shared:
            opt_q.step(grad.combined(), lr, t)
        else:
            opt_q.step(grad.query, lr, t)
            opt_r.step(grad.target, lr, t)
        heads.query.step = t
        if not heads.is_shared:
            heads.target.step = t

        if checkpoint_dir and cfg.checkpoint_every and t % cfg.checkpoint_every == 0:
            save_head_pair(heads, Path(checkpoint_dir) / f"step-{t:06d}")
    return heads, curve


# --- persistence ---------------------------------------------------------------


def save_head(head: ProjectionHead, path: str | Path) -> None:
    """Checkpoint format: magic, dims, flags, f64 weights, bias, seed, step."""
    flags = (_FLAG_BIAS if head.bias is not None else 0) | (_FLAG_SHARED if head.shared else 0)
    with open(path, "wb") as fh:
        fh.write(HEAD_MAGIC)
        fh.write(struct.pack("<IIB", head.d_in, head.d_out, flags))
        fh.write(head.weights.astype("<f8").tobytes())
        if head.bias is not None:
            fh.write(head.bias.astype("<f8").tobytes())
        fh.write(struct.pack("<QQ", head.seed, head.step))


def load_head(path: str | Path) -> ProjectionHead:
    data = Path(path).read_bytes()
    if len(data) < len(HEAD_MAGIC) or data[: len(HEAD_MAGIC)] != HEAD_MAGIC:
        raise CorruptIndex(0, "bad head magic")
    off = len(HEAD_MAGIC)
    if len(data) < off + 9:
        raise CorruptIndex(off, "truncated head header")
    d_in, d_out, flags = struct.unpack_from("<IIB", data, off)
    off += 9
    has_bias = bool(flags & _FLAG_BIAS)
    expected = off + d_in * d_out * 8 + (d_out * 8 if has_bias else 0) + 16
    if len(data) != expected:
        raise CorruptIndex(off, f"head file of {len(data)} bytes, expected {expected}")
    weights = np.frombuffer(data, dtype="<f8", count=d_in * d_out, offset=off).reshape(d_in, d_out)
    off += d_in * d_out * 8
    bias = None
    if has_bias:
        bias = np.frombuffer(data, dtype="<f8", count=d_out, offset=off).copy()
        off += d_out * 8
    seed, step = struct.unpack_from("<QQ", data, off)
    return ProjectionHead(
        weights=weights.copy(),
        bias=bias,
        shared=bool(flags & _FLAG_SHARED),
        seed=seed,
        step=step,
    )


def save_head_pair(heads: HeadPair, stem: str | Path) -> list[Path]:
    """Persist a pair: one file when shared, two files otherwise."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    if heads.is_shared:
        path = stem.with_suffix(".head")
        save_head(heads.query, path)
        return [path]
    q_path = stem.with_suffix(".query.head")
    t_path = stem.with_suffix(".target.head")
    save_head(heads.query, q_path)
    save_head(heads.target, t_path)
    return [q_path, t_path]


def load_head_pair(stem: str | Path) -> HeadPair:
    stem = Path(stem)
    shared = stem.with_suffix(".head")
    if shared.exists():
        head = load_head(shared)
        return HeadPair(head, head)
    return HeadPair(
        load_head(stem.with_suffix(".query.head")),
        load_head(stem.with_suffix(".target.head")),
    )


def loss_curve_csv(curve: Sequence[tuple[int, float]]) -> str:
    lines = ["step,loss"] + [f"{step},{loss!r}" for step, loss in curve]
    return "\n".join(lines) + "\n"

"""Synthetic dataset generators for desk-scale training and ablation tests.

``planted_dataset`` builds the trainer's sanity task: each class has a short
token shared between query and target (the planted hash feature) plus a long
query-side class token; targets bury their shared token among long random
tokens, so untrained retrieval sits at chance while a linear head can align
the pairs.  ``position_dataset`` puts the only discriminative token past a
chosen whitespace position, so retrieval quality depends on the truncation
budget.  All rows carry their instruction inline in the query text, like the
real corpora.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import EvalPair, TrainingPair, ingest_eval, ingest_train

PLANTED_INSTRUCTION = "find code:"
PLANTED_DIM = 512


def _token(rng: np.random.Generator, length: int) -> str:
    return "".join(chr(97 + c) for c in rng.integers(0, 26, length))


@dataclass(frozen=True)
class PlantedDataset:
    train_rows: list[dict]
    heldout_rows: list[dict]

    def training_pairs(self) -> list[TrainingPair]:
        return ingest_train(json.dumps(r) for r in self.train_rows)

    def heldout_pairs(self, dataset_tag: str = "planted") -> list[EvalPair]:
        return ingest_eval((json.dumps(r) for r in self.heldout_rows), "qt→rc", dataset_tag)


def planted_dataset(
    n_classes: int = 512,
    seed: int = 7,
    shared_len: int = 5,
    handle_len: int = 150,
    heldout_noise_tokens: int = 4,
    heldout_noise_len: int = 4,
    target_noise_tokens: int = 250,
    target_noise_len: int = 160,
) -> PlantedDataset:
    """Planted-feature task: 1:1 classes, clean train queries, noisy held-out."""
    rng = np.random.default_rng(seed)
    shared = [_token(rng, shared_len) for _ in range(n_classes)]
    handle = [_token(rng, handle_len) for _ in range(n_classes)]

    def query_text(i: int, noise_tokens: int) -> str:
        toks = [shared[i], handle[i]] + [_token(rng, heldout_noise_len) for _ in range(noise_tokens)]
        rng.shuffle(toks)
        return PLANTED_INSTRUCTION + "\n" + " ".join(toks)

    def target_text(i: int) -> str:
        toks = [shared[i]] + [_token(rng, target_noise_len) for _ in range(target_noise_tokens)]
        rng.shuffle(toks)
        return " ".join(toks)

    targets = [target_text(i) for i in range(n_classes)]
    train_rows = [
        {
            "qry": query_text(i, 0),
            "qry_img_path": None,
            "pos_text": targets[i],
            "pos_img_path": None,
            "neg_text": None,
            "neg_img_path": None,
        }
        for i in range(n_classes)
    ]
    heldout_rows = [
        {
            "qry_text": query_text(i, heldout_noise_tokens),
            "qry_img_path": None,
            "tgt_text": targets[i],
            "tgt_img_path": None,
        }
        for i in range(n_classes)
    ]
    return PlantedDataset(train_rows, heldout_rows)


def position_dataset(
    n: int = 64,
    seed: int = 11,
    marker_position: int = 300,
    marker_len: int = 300,
    junk_len: int = 4,
    total_units: int = 540,
) -> list[dict]:
    """Eval rows whose only query↔target link sits past ``marker_position``.

    Every unit before and after the marker is item-unique junk, so budgets
    below the marker position leave retrieval at chance and budgets above it
    make the pairing easy.  Positions count composed whitespace units; the
    marker is long so its gram mass dominates junk collision noise once it
    fits inside the budget.
    """
    rng = np.random.default_rng(seed)
    rows = []
    inst_units = len(PLANTED_INSTRUCTION.split())
    for i in range(n):
        marker = _token(rng, marker_len)

        def body(position: int) -> str:
            junk = [_token(rng, junk_len) for _ in range(total_units)]
            junk[position] = marker
            return " ".join(junk)

        # The instruction consumes leading units of the composed query.
        rows.append(
            {
                "qry_text": PLANTED_INSTRUCTION + "\n" + body(marker_position - inst_units - 1),
                "qry_img_path": None,
                "tgt_text": body(marker_position - 1),
                "tgt_img_path": None,
            }
        )
    return rows


def rows_to_jsonl(rows: Sequence[dict]) -> str:
    return "\n".join(json.dumps(r, ensure_ascii=False) for r in rows) + "\n"

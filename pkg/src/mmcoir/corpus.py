"""Dataset schema, query/target composition, and serialization.

Line-delimited training rows carry six keys (``qry``, ``qry_img_path``,
``pos_text``, ``pos_img_path``, ``neg_text``, ``neg_img_path``) and eval rows
four (``qry_text``, ``qry_img_path``, ``tgt_text``, ``tgt_img_path``).  An
absent key, a ``null`` value and an empty string all mean "missing".  The
literal token ``[image]`` inside a query text marks an attached image and
must agree with the image-path field.

Composition renders an item to a canonical single string: instruction,
text part, ``[image]`` placeholder, code part, joined by newlines and
truncated to a whitespace-unit budget (prefix kept).  Identical inputs
always produce byte-identical output.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import EmptyItem, MalformedRow, TemplateUnknown

logger = logging.getLogger(__name__)

IMAGE_TOKEN = "[image]"

_UNIT_RE = re.compile(r"\S+")

TRAIN_FIELDS = ("qry", "qry_img_path", "pos_text", "pos_img_path", "neg_text", "neg_img_path")
EVAL_FIELDS = ("qry_text", "qry_img_path", "tgt_text", "tgt_img_path")


class Modality(enum.Flag):
    TEXT = enum.auto()
    IMAGE = enum.auto()
    CODE = enum.auto()


def mask_letters(mask: Modality) -> str:
    """Compact string form of a modality mask, e.g. ``"TI"``."""
    out = ""
    if Modality.TEXT in mask:
        out += "T"
    if Modality.IMAGE in mask:
        out += "I"
    if Modality.CODE in mask:
        out += "C"
    return out


@dataclass(frozen=True)
class ModalItem:
    """One query or candidate: any non-empty combination of text/code/image."""

    text: str | None = None
    code: str | None = None
    image_ref: str | None = None
    modality_mask: Modality = field(init=False)

    def __post_init__(self):
        # Empty strings count as missing to mirror the ingestion rule.
        for name in ("text", "code", "image_ref"):
            if getattr(self, name) == "":
                object.__setattr__(self, name, None)
        mask = Modality(0)
        if self.text is not None:
            mask |= Modality.TEXT
        if self.code is not None:
            mask |= Modality.CODE
        if self.image_ref is not None:
            mask |= Modality.IMAGE
        if not mask:
            raise EmptyItem("item has no text, code or image")
        object.__setattr__(self, "modality_mask", mask)


@dataclass(frozen=True)
class Instruction:
    """Rendered retrieval instruction accompanying a query."""

    template_id: str
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("instruction text must be non-empty")


@dataclass(frozen=True)
class TrainingPair:
    """One six-key training row; ``row`` is its 0-based position in the file."""

    row: int
    qry: str
    qry_img_path: str | None
    pos_text: str | None
    pos_img_path: str | None
    neg_text: str | None
    neg_img_path: str | None

    def to_record(self) -> dict[str, str | None]:
        return {name: getattr(self, name) for name in TRAIN_FIELDS}

    def query_item(self) -> ModalItem:
        return ModalItem(text=_strip_image_token(self.qry), image_ref=self.qry_img_path)

    def positive_item(self) -> ModalItem:
        return ModalItem(code=_strip_image_token(self.pos_text), image_ref=self.pos_img_path)

    def negative_item(self) -> ModalItem | None:
        if self.neg_text is None and self.neg_img_path is None:
            return None
        return ModalItem(code=_strip_image_token(self.neg_text), image_ref=self.neg_img_path)


@dataclass(frozen=True)
class EvalPair:
    """One four-key evaluation row plus its task/dataset labels."""

    row: int
    qry_text: str | None
    qry_img_path: str | None
    tgt_text: str | None
    tgt_img_path: str | None
    task_tag: str
    dataset_tag: str

    def to_record(self) -> dict[str, str | None]:
        return {name: getattr(self, name) for name in EVAL_FIELDS}

    def query_item(self) -> ModalItem:
        return ModalItem(text=_strip_image_token(self.qry_text), image_ref=self.qry_img_path)

    def target_item(self) -> ModalItem:
        return ModalItem(code=_strip_image_token(self.tgt_text), image_ref=self.tgt_img_path)


@dataclass(frozen=True)
class SerializedItem:
    """Canonical composed form of an item, ready for a backend."""

    canonical_text: str
    image_ref: str | None
    token_budget: int


def unit_count(text: str) -> int:
    """Number of whitespace-delimited units in ``text``."""
    return len(_UNIT_RE.findall(text))


def truncate_units(text: str, budget: int) -> str:
    """Keep the prefix of ``text`` holding at most ``budget`` units.

    The cut lands exactly at the end of the budget-th unit, so for budgets
    b1 <= b2 the shorter result is always a byte prefix of the longer one.
    """
    if budget < 1:
        raise ValueError(f"token budget must be positive, got {budget}")
    seen = 0
    for m in _UNIT_RE.finditer(text):
        seen += 1
        if seen == budget:
            return text[: m.end()]
    return text


def _strip_image_token(text: str | None) -> str | None:
    """Remove the ``[image]`` marker; image presence travels as image_ref."""
    if text is None:
        return None
    return text.replace(IMAGE_TOKEN, " ").strip()


def _content_parts(item: ModalItem) -> list[str]:
    parts = []
    if item.text is not None:
        parts.append(item.text)
    if item.image_ref is not None:
        parts.append(IMAGE_TOKEN)
    if item.code is not None:
        parts.append(item.code)
    if not parts:
        raise EmptyItem("item has no content to serialize")
    return parts


def compose_query(item: ModalItem, inst: Instruction, budget: int) -> SerializedItem:
    """Serialize a query: instruction, text, ``[image]``, code, "\\n"-joined."""
    text = "\n".join([inst.text] + _content_parts(item))
    return SerializedItem(truncate_units(text, budget), item.image_ref, budget)


def compose_target(item: ModalItem, budget: int) -> SerializedItem:
    """Serialize a candidate: like a query but with no instruction prefix."""
    text = "\n".join(_content_parts(item))
    return SerializedItem(truncate_units(text, budget), item.image_ref, budget)


# --- ingestion ---------------------------------------------------------------


def _parse_line(line: str, line_no: int, fields: Sequence[str], strict_keys: bool) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRow(line_no, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise MalformedRow(line_no, "row is not a JSON object")
    if strict_keys:
        unknown = set(obj) - set(fields)
        if unknown:
            raise MalformedRow(line_no, f"unknown fields: {sorted(unknown)}")
    out: dict[str, str | None] = {}
    for name in fields:
        value = obj.get(name)
        if value is None or value == "":
            out[name] = None
        elif isinstance(value, str):
            out[name] = value
        else:
            raise MalformedRow(line_no, f"field {name!r} must be a string or null")
    return out


def _validate_train(rec: Mapping[str, str | None], line_no: int) -> None:
    if rec["qry"] is None:
        raise MalformedRow(line_no, "missing qry")
    if rec["pos_text"] is None and rec["pos_img_path"] is None:
        raise MalformedRow(line_no, "missing both positive fields")
    has_token = IMAGE_TOKEN in rec["qry"]
    has_image = rec["qry_img_path"] is not None
    if has_token and not has_image:
        raise MalformedRow(line_no, f"qry contains {IMAGE_TOKEN!r} but qry_img_path is missing")
    if has_image and not has_token:
        raise MalformedRow(line_no, f"qry_img_path set but qry lacks the {IMAGE_TOKEN!r} token")


def ingest_train(lines: Iterable[str], lenient: bool = False) -> list[TrainingPair]:
    """Parse six-key training rows, in order, with 0-based row ids.

    Strict mode aborts on the first schema violation; lenient mode logs and
    skips the offending row while keeping original row numbering.
    """
    pairs: list[TrainingPair] = []
    for row, line in enumerate(lines):
        line = line.rstrip("\n")
        try:
            rec = _parse_line(line, row + 1, TRAIN_FIELDS, strict_keys=not lenient)
            _validate_train(rec, row + 1)
        except MalformedRow as exc:
            if not lenient:
                raise
            logger.warning("skipping train row: %s", exc)
            continue
        pairs.append(TrainingPair(row=row, **rec))
    return pairs


def _validate_eval(rec: Mapping[str, str | None], line_no: int) -> None:
    if rec["qry_text"] is None and rec["qry_img_path"] is None:
        raise MalformedRow(line_no, "missing both query fields")
    if rec["tgt_text"] is None and rec["tgt_img_path"] is None:
        raise MalformedRow(line_no, "missing both target fields")


def ingest_eval(
    lines: Iterable[str],
    task_tag: str,
    dataset_tag: str,
    lenient: bool = False,
) -> list[EvalPair]:
    """Parse four-key evaluation rows for one (dataset, task)."""
    task_tag = normalize_task_tag(task_tag)
    pairs: list[EvalPair] = []
    for row, line in enumerate(lines):
        line = line.rstrip("\n")
        try:
            rec = _parse_line(line, row + 1, EVAL_FIELDS, strict_keys=not lenient)
            _validate_eval(rec, row + 1)
        except MalformedRow as exc:
            if not lenient:
                raise
            logger.warning("skipping eval row: %s", exc)
            continue
        pairs.append(EvalPair(row=row, task_tag=task_tag, dataset_tag=dataset_tag, **rec))
    return pairs


# --- instruction templates ---------------------------------------------------

TEMPLATE_VERSION = "v1"

# One standardized instruction per retrieval direction, applied to datasets
# that do not embed an instruction in the query text themselves.
INSTRUCTION_TEMPLATES: dict[str, str] = {
    "qt→rc": "Please retrieve the code that matches the description.",
    "qi→rc": "please retrieve the code that matches this image.",
    "qc→ri": "Please retrieve the image that matches this code.",
    "qt→ri": "Please retrieve the image that matches the description.",
    "qc→rc": "Please retrieve the code that matches this code.",
    "qi→ri": "Please retrieve the image that matches this image.",
    "qti→rc": "Please retrieve the code that matches this image and the edit instruction.",
    "qtc→ri": "Please retrieve the image that matches this code and the edit instruction.",
    "qtc→ric": "Please retrieve the image and its code that match this code and the edit instruction.",
    "default": "Please retrieve the item that matches the query.",
}


def normalize_task_tag(tag: str) -> str:
    """Canonical direction label: lowercase, unicode arrow, no spaces."""
    return tag.strip().lower().replace("->", "→").replace(" ", "").replace(",", "")


def instruction_for(task_tag: str, strict: bool = False) -> Instruction:
    """Standard instruction for a retrieval direction.

    Unknown directions fall back to the generic template unless ``strict``.
    """
    tag = normalize_task_tag(task_tag)
    if tag not in INSTRUCTION_TEMPLATES:
        if strict:
            raise TemplateUnknown(f"no instruction template for task {task_tag!r}")
        tag = "default"
    return Instruction(template_id=f"{TEMPLATE_VERSION}/{tag}", text=INSTRUCTION_TEMPLATES[tag])


# --- length reporting --------------------------------------------------------


@dataclass(frozen=True)
class LengthRow:
    label: str
    n: int
    mean_units: float
    max_units: int


def _pair_units(pair: TrainingPair | EvalPair) -> int:
    query = "\n".join(_content_parts(pair.query_item()))
    if isinstance(pair, TrainingPair):
        target = "\n".join(_content_parts(pair.positive_item()))
    else:
        target = "\n".join(_content_parts(pair.target_item()))
    return unit_count(query) + unit_count(target)


def length_report(
    groups: Mapping[str, Sequence[TrainingPair | EvalPair]],
) -> list[LengthRow]:
    """Per-group mean/max whitespace-unit length of query+target content."""
    rows = []
    for label in sorted(groups):
        pairs = groups[label]
        if not pairs:
            continue
        lengths = [_pair_units(p) for p in pairs]
        rows.append(
            LengthRow(
                label=label,
                n=len(lengths),
                mean_units=sum(lengths) / len(lengths),
                max_units=max(lengths),
            )
        )
    return rows

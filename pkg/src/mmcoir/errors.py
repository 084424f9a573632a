"""Exception hierarchy for the retrieval engine.

Every engine-raised error derives from :class:`EngineError` so that callers
(CLI, service) can map failures to a single-line machine-parsable message.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine errors."""


class ConfigError(EngineError):
    """Invalid or inconsistent configuration."""


class MalformedRow(EngineError):
    """A dataset row violating the ingestion schema."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class EmptyItem(EngineError):
    """A modal item with no content in any modality."""


class ImageReadError(EngineError):
    """An image resource could not be read."""

    def __init__(self, path: str, detail: str = ""):
        super().__init__(f"cannot read image {path!r}" + (f": {detail}" if detail else ""))
        self.path = path


class ProtocolError(EngineError):
    """Remote backend answered with a malformed payload."""


class TransportError(EngineError):
    """Remote endpoint unreachable after bounded retries."""


class DimMismatch(EngineError):
    """Vectors of inconsistent dimension were mixed."""


class CacheCorrupt(EngineError):
    """An embedding cache entry failed validation."""

    def __init__(self, key: str, detail: str = ""):
        super().__init__(f"cache entry {key} corrupt" + (f": {detail}" if detail else ""))
        self.key = key


class DegenerateBatch(EngineError):
    """A training batch with no usable negatives."""


class NonFiniteLoss(EngineError):
    """Training produced a non-finite loss value."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


class DuplicateId(EngineError):
    """An index was built with a repeated item id."""


class EmptyPool(EngineError):
    """A search was issued against an empty index."""


class CorruptIndex(EngineError):
    """An index file failed magic/size validation."""

    def __init__(self, offset: int, reason: str):
        super().__init__(f"corrupt index at byte {offset}: {reason}")
        self.offset = offset
        self.reason = reason


class EmptyCorpus(EngineError):
    """Exemplar retrieval against an empty code corpus."""


class GuardExhausted(EngineError):
    """The contamination guard removed every candidate exemplar."""


class TemplateUnknown(EngineError):
    """An unregistered prompt or instruction template id."""


class EmptyGeneration(EngineError):
    """The generation endpoint returned no text."""

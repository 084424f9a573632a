"""Kernel backend selection: compiled extension when available, NumPy otherwise.

Set ``MMCOIR_PURE_PYTHON=1`` to force the fallback (used by the parity tests
and the kernel benchmark).  Both backends are bit-identical by contract.
"""

from __future__ import annotations

import os

from . import _fallback

if os.environ.get("MMCOIR_PURE_PYTHON") == "1":
    _impl = _fallback
    BACKEND = "numpy"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - build without compiler
        _impl = _fallback
        BACKEND = "numpy"

accumulate_ngrams = _impl.accumulate_ngrams
dot_scores = _impl.dot_scores
dot_scores_block = _impl.dot_scores_block

__all__ = ["BACKEND", "accumulate_ngrams", "dot_scores", "dot_scores_block"]

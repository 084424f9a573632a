"""Multimodal code retrieval engine.

Instruction-conditioned multimodal query composition, pluggable embedding
backends, temperature-scaled contrastive head training, exact top-k vector
search, IR metric reporting, and retrieval-augmented prompt construction.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]

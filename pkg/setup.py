"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a NumPy fallback with identical
numerics is selected at import time), so any build failure here is degraded
to a warning rather than an error.
"""

import warnings

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/mmcoir/_kernels/_core.pyx"],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - environment without Cython
    warnings.warn(f"building without compiled kernels: {exc}")

setup(ext_modules=ext_modules)

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmcoir.embedder import BackendConfig, BackendKind

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "mmcoir" / "fixtures"


@pytest.fixture
def builtin_cfg() -> BackendConfig:
    return BackendConfig(kind=BackendKind.BUILTIN_HASH, dim=64)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def read_lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()

"""Config file loading, environment overrides, and precedence."""

from __future__ import annotations

import pytest

from mmcoir.config import ENV_BACKEND_URL, ENV_DATA_ROOT, ENV_SEED, load_config
from mmcoir.embedder import BackendKind
from mmcoir.errors import ConfigError


def test_defaults():
    cfg = load_config(env={})
    assert cfg.backend.kind is BackendKind.BUILTIN_HASH
    assert cfg.backend.dim == 256
    assert cfg.scoring.tau == 0.02
    assert cfg.trainer.learning_rate == 5e-5
    assert cfg.trainer.warmup_steps == 100
    assert cfg.trainer.total_steps == 1000
    assert cfg.budgets == (128, 256, 512)


def test_file_values(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(
        "seed: 9\nbackend:\n  dim: 128\n  token_budget: 512\ntrainer:\n  batch_size: 16\n"
    )
    cfg = load_config(path, env={})
    assert cfg.seed == 9
    assert cfg.backend.dim == 128
    assert cfg.backend.token_budget == 512
    assert cfg.trainer.batch_size == 16


def test_env_overrides_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 9\ndata_root: /from/file\n")
    env = {ENV_SEED: "42", ENV_DATA_ROOT: "/from/env", ENV_BACKEND_URL: "http://x/embed"}
    cfg = load_config(path, env=env)
    assert cfg.seed == 42
    assert str(cfg.data_root) == "/from/env"
    assert cfg.backend.kind is BackendKind.REMOTE
    assert cfg.backend.endpoint == "http://x/embed"


def test_flags_override_env(tmp_path):
    env = {ENV_SEED: "42"}
    cfg = load_config(None, env=env, overrides={"seed": 7, "dim": 96})
    assert cfg.seed == 7
    assert cfg.backend.dim == 96


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("backend:\n  nonsense: 1\n")
    with pytest.raises(ConfigError):
        load_config(path, env={})


def test_bad_env_seed():
    with pytest.raises(ConfigError):
        load_config(None, env={ENV_SEED: "not-a-number"})

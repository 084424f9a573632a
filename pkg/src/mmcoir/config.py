"""Engine configuration: one YAML file, MMCOIR_* env overrides, CLI flags.

Precedence: explicit flags > environment > config file > defaults.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .align import ScoringConfig, TrainerConfig
from .embedder import BackendConfig, BackendKind
from .errors import ConfigError

ENV_DATA_ROOT = "MMCOIR_DATA_ROOT"
ENV_BACKEND_URL = "MMCOIR_BACKEND_URL"
ENV_SEED = "MMCOIR_SEED"


class PoolMode(enum.Enum):
    PER_TASK = "per-task"
    MERGED = "merged"


@dataclass(frozen=True)
class EngineConfig:
    data_root: Path = Path(".")
    backend: BackendConfig = field(
        default_factory=lambda: BackendConfig(kind=BackendKind.BUILTIN_HASH, dim=256)
    )
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    budgets: tuple[int, ...] = (128, 256, 512)
    pools: PoolMode = PoolMode.PER_TASK
    seed: int = 0


def _build_backend(raw: Mapping[str, Any]) -> BackendConfig:
    kind = BackendKind(raw.get("kind", "builtin"))
    known = {f.name for f in fields(BackendConfig)} - {"kind"}
    unknown = set(raw) - known - {"kind"}
    if unknown:
        raise ConfigError(f"unknown backend options: {sorted(unknown)}")
    options = {k: v for k, v in raw.items() if k in known}
    options.setdefault("dim", 256)
    return BackendConfig(kind=kind, **options)


def _build_trainer(raw: Mapping[str, Any]) -> TrainerConfig:
    known = {f.name for f in fields(TrainerConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown trainer options: {sorted(unknown)}")
    return TrainerConfig(**dict(raw))


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> EngineConfig:
    """Assemble the engine configuration with documented precedence."""
    env = os.environ if env is None else env
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigError(f"config {path} must be a mapping")
            raw = loaded

    cfg = EngineConfig(
        data_root=Path(raw.get("data_root", ".")),
        backend=_build_backend(raw.get("backend", {})),
        scoring=ScoringConfig(**raw.get("scoring", {})),
        trainer=_build_trainer(raw.get("trainer", {})),
        budgets=tuple(raw.get("budgets", (128, 256, 512))),
        pools=PoolMode(raw.get("pools", "per-task")),
        seed=int(raw.get("seed", 0)),
    )

    if env.get(ENV_DATA_ROOT):
        cfg = replace(cfg, data_root=Path(env[ENV_DATA_ROOT]))
    if env.get(ENV_BACKEND_URL):
        cfg = replace(
            cfg,
            backend=replace(cfg.backend, kind=BackendKind.REMOTE, endpoint=env[ENV_BACKEND_URL]),
        )
    if env.get(ENV_SEED):
        try:
            cfg = replace(cfg, seed=int(env[ENV_SEED]))
        except ValueError as exc:
            raise ConfigError(f"{ENV_SEED} must be an integer") from exc

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "data_root":
            cfg = replace(cfg, data_root=Path(value))
        elif key == "seed":
            cfg = replace(cfg, seed=int(value))
        elif key == "dim":
            cfg = replace(cfg, backend=replace(cfg.backend, dim=int(value)))
        elif key == "token_budget":
            cfg = replace(cfg, backend=replace(cfg.backend, token_budget=int(value)))
        elif key == "endpoint":
            cfg = replace(
                cfg, backend=replace(cfg.backend, kind=BackendKind.REMOTE, endpoint=value)
            )
        elif key == "cache_dir":
            cfg = replace(cfg, backend=replace(cfg.backend, cache_dir=str(value)))
        elif key == "budgets":
            cfg = replace(cfg, budgets=tuple(int(b) for b in value))
        elif key == "tau":
            cfg = replace(cfg, scoring=ScoringConfig(tau=float(value)))
        elif key == "trainer":
            cfg = replace(cfg, trainer=replace(cfg.trainer, **value))
        else:
            raise ConfigError(f"unknown override {key!r}")
    return cfg


def config_snapshot(cfg: EngineConfig) -> str:
    """YAML snapshot written into each run directory for reproduction."""
    return yaml.safe_dump(
        {
            "data_root": str(cfg.data_root),
            "backend": {
                "kind": cfg.backend.kind.value,
                "dim": cfg.backend.dim,
                "endpoint": cfg.backend.endpoint,
                "token_budget": cfg.backend.token_budget,
                "cache_dir": cfg.backend.cache_dir,
                "model_id": cfg.backend.model_id,
                "batch_size": cfg.backend.batch_size,
            },
            "scoring": {"tau": cfg.scoring.tau},
            "trainer": {
                "learning_rate": cfg.trainer.learning_rate,
                "warmup_steps": cfg.trainer.warmup_steps,
                "total_steps": cfg.trainer.total_steps,
                "batch_size": cfg.trainer.batch_size,
                "seed": cfg.trainer.seed,
                "optimizer": cfg.trainer.optimizer.value,
                "shared_head": cfg.trainer.shared_head,
            },
            "budgets": list(cfg.budgets),
            "pools": cfg.pools.value,
            "seed": cfg.seed,
        },
        sort_keys=True,
    )

"""JSON run configuration: model, training, loss and data sections."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossConfig
from .network import SDWNetConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataPaths:
    train_manifest: str | None = None
    val_manifest: str | None = None
    out_dir: str = "runs/default"


# JSON spellings that differ from the dataclass field names
_ALIASES = {"loss": {"lambda": "lambda_"}}


def _build(cls, section: str, raw) -> object:
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{section}' must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    alias = _ALIASES.get(section, {})
    kwargs = {}
    for key, value in raw.items():
        name = alias.get(key, key)
        if name not in names:
            raise ConfigError(f"unknown key '{section}.{key}'")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid '{section}' section: {e}") from None


def _dump(obj, section: str) -> dict:
    d = dataclasses.asdict(obj)
    back = {v: k for k, v in _ALIASES.get(section, {}).items()}
    return {back.get(k, k): (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


@dataclass
class RunConfig:
    model: SDWNetConfig = field(default_factory=SDWNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataPaths = field(default_factory=DataPaths)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("run config must be a JSON object")
        sections = {"model": SDWNetConfig, "train": TrainConfig, "loss": LossConfig, "data": DataPaths}
        extra = set(raw) - set(sections)
        if extra:
            raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(extra))}")
        return cls(**{k: _build(c, k, raw.get(k)) for k, c in sections.items()})

    def to_dict(self) -> dict:
        return {s: _dump(getattr(self, s), s) for s in ("model", "train", "loss", "data")}

    def override(self, section: str, **values) -> "RunConfig":
        """Copy with non-None ``values`` replacing fields of ``section``."""
        current = _dump(getattr(self, section), section)
        current.update({k: v for k, v in values.items() if v is not None})
        raw = self.to_dict()
        raw[section] = current
        return RunConfig.from_dict(raw)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    cfg = RunConfig.from_dict(raw)
    # relative data paths are taken relative to the config file
    base = path.parent
    for f in ("train_manifest", "val_manifest", "out_dir"):
        v = getattr(cfg.data, f)
        if v is not None and not Path(v).is_absolute():
            setattr(cfg.data, f, str(base / v))
    return cfg

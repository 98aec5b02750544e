"""Layered run configuration and its JSON form."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from ._checks import FieldValueError, check_fields
from .env import WorldConfig
from .ppo import PPOConfig

OUT_ENV_VAR = "SPREAD_IPPO_OUT"


class ConfigError(ValueError):
    """Bad configuration; the message names the offending field path."""


def default_output_dir() -> str:
    return str(Path(os.environ.get(OUT_ENV_VAR, "runs")) / "default")


@dataclass(frozen=True)
class TrainConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    episodes: int = 1500
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    log_every: int = 10
    checkpoint_every: int = 100
    eval_episodes: int = 100
    success_radius: float = 0.10
    heatmap_resolution: int = 50
    output_dir: str = field(default_factory=default_output_dir)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(self.seeds))
        checks = [
            ("episodes", self.episodes >= 1),
            ("seeds", len(self.seeds) >= 1),
            ("log_every", self.log_every >= 1),
            ("checkpoint_every", self.checkpoint_every >= 1),
            ("eval_episodes", self.eval_episodes >= 1),
            ("success_radius", self.success_radius > 0),
            ("heatmap_resolution", self.heatmap_resolution >= 1),
        ]
        check_fields(self, checks)

    def to_dict(self, include_output_dir: bool = True) -> dict:
        d = {
            "world": dataclasses.asdict(self.world),
            "ppo": dataclasses.asdict(self.ppo),
            "episodes": self.episodes,
            "seeds": list(self.seeds),
            "log_every": self.log_every,
            "checkpoint_every": self.checkpoint_every,
            "eval_episodes": self.eval_episodes,
            "success_radius": self.success_radius,
            "heatmap_resolution": self.heatmap_resolution,
        }
        if include_output_dir:
            d["output_dir"] = self.output_dir
        return d

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _coerce(path: str, value, default):
    """Check a JSON value against the type of the field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected a JSON object")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {prefix}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        kwargs[key] = _coerce(path, value, getattr(defaults, key))
    try:
        return cls(**kwargs)
    except FieldValueError as exc:
        raise ConfigError(f"{prefix}.{exc.field}: {exc}") from None


def config_from_dict(data: dict) -> TrainConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    data = dict(data)
    world = _build(WorldConfig, data.pop("world", {}), "world")
    ppo = _build(PPOConfig, data.pop("ppo", {}), "ppo")
    top_defaults = TrainConfig(world=world, ppo=ppo)
    names = {f.name for f in dataclasses.fields(TrainConfig)} - {"world", "ppo"}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in config: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key == "seeds":
            if not isinstance(value, list) or not all(
                isinstance(s, int) and not isinstance(s, bool) for s in value
            ):
                raise ConfigError(f"seeds: expected a list of integers, got {value!r}")
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = _coerce(key, value, getattr(top_defaults, key))
    try:
        return TrainConfig(world=world, ppo=ppo, **kwargs)
    except FieldValueError as exc:
        raise ConfigError(f"{exc.field}: {exc}") from None


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: JSON parse error at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)


def save_config(config: TrainConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")

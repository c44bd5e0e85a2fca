"""Run configuration: strict TOML loading with documented defaults.

Unknown keys are fatal (a silently ignored hyperparameter typo invalidates
an experiment); every absent key falls back to the default recorded here.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .io import config_fingerprint
from .rewards import RewardConfig
from .sampler import SamplerConfig
from .scene import Codebook
from .trainer import AGGREGATION_MODES, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSettings:
    n_categories: int = 8
    codebook_seed: int = 0

    def build_codebook(self) -> Codebook:
        return Codebook.build(n_categories=self.n_categories, seed=self.codebook_seed)


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    train: TrainConfig = field(default_factory=TrainConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    scene: SceneSettings = field(default_factory=SceneSettings)

    def to_dict(self) -> dict:
        train = {k: v for k, v in self.train.__dict__.items() if k != "sampler"}
        return {
            "seed": self.seed,
            "train": train,
            "sampler": dict(self.train.sampler.__dict__),
            "rewards": dict(self.rewards.__dict__),
            "scene": dict(self.scene.__dict__),
        }

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.to_dict())


def _positive(x) -> bool:
    return x > 0


def _non_negative(x) -> bool:
    return x >= 0


def _fraction(x) -> bool:
    return 0.0 <= x <= 1.0


# key -> (python type, validator or None)
_TOP_KEYS = {"seed": (int, None), "out_dir": (str, None)}
_TRAIN_KEYS = {
    "iterations": (int, _non_negative),
    "batch_prompts": (int, _positive),
    "group_size": (int, lambda x: x >= 2),
    "tau": (float, _positive),
    "kl_beta": (float, _non_negative),
    "clip_eps": (float, _positive),
    "lr": (float, _positive),
    "weight_decay": (float, _non_negative),
    "aggregation": (str, lambda x: x in AGGREGATION_MODES),
    "checkpoint_interval": (int, _positive),
    "single_prompt_fraction": (float, _fraction),
    "multi_k_min": (int, lambda x: 1 <= x <= 7),
    "multi_k_max": (int, lambda x: 1 <= x <= 7),
    "prompt_pool_size": (int, _non_negative),
    "hidden": (int, _positive),
    "n_slots": (int, _positive),
    "window_shift_interval": (int, _non_negative),
}
_SAMPLER_KEYS = {
    "total_steps": (int, _positive),
    "window_size": (int, _non_negative),
    "window_start": (int, _non_negative),
    "noise_level": (float, _non_negative),
}
_REWARD_KEYS = {
    "depth_margin": (float, _non_negative),
    "spatial_margin_ratio": (float, _non_negative),
    "inside_threshold": (float, _fraction),
    "outside_threshold": (float, _fraction),
    "logit_scale": (float, _positive),
}
_SCENE_KEYS = {
    "n_categories": (int, _positive),
    "codebook_seed": (int, None),
}


def _coerce(section: str, key: str, value, expected_type):
    if expected_type is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, expected_type) or isinstance(value, bool) and expected_type is int:
        raise ConfigError(
            f"config key {section}{key} expects {expected_type.__name__}, "
            f"got {type(value).__name__}"
        )
    return value


def _read_section(data: dict, section: str, schema: dict) -> dict:
    prefix = f"{section}." if section else ""
    out = {}
    for key, value in data.items():
        if key not in schema:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        expected_type, validator = schema[key]
        value = _coerce(prefix, key, value, expected_type)
        if validator is not None and not validator(value):
            raise ConfigError(f"config key {prefix}{key} out of range: {value!r}")
        out[key] = value
    return out


def load_config(path: str, seed_override: int | None = None) -> RunConfig:
    """Parse and validate a TOML run configuration.

    An empty file yields pure defaults. ``seed_override`` replaces the
    master seed (the CLI --seed flag).
    """
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return build_config(raw, seed_override=seed_override)


def build_config(raw: dict, seed_override: int | None = None) -> RunConfig:
    known_sections = {"train", "sampler", "rewards", "scene"}
    top = {}
    for key, value in raw.items():
        if key in known_sections:
            continue
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown config key: {key}")
        expected_type, validator = _TOP_KEYS[key]
        top[key] = _coerce("", key, value, expected_type)

    train_kw = _read_section(raw.get("train", {}), "train", _TRAIN_KEYS)
    sampler_kw = _read_section(raw.get("sampler", {}), "sampler", _SAMPLER_KEYS)
    reward_kw = _read_section(raw.get("rewards", {}), "rewards", _REWARD_KEYS)
    scene_kw = _read_section(raw.get("scene", {}), "scene", _SCENE_KEYS)

    seed = seed_override if seed_override is not None else top.get("seed", 0)
    try:
        sampler = SamplerConfig(**sampler_kw)
        train = TrainConfig(seed=seed, sampler=sampler, **train_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if train.multi_k_min > train.multi_k_max:
        raise ConfigError("train.multi_k_min must not exceed train.multi_k_max")
    return RunConfig(
        seed=seed,
        out_dir=top.get("out_dir", "runs/out"),
        train=train,
        rewards=RewardConfig(**reward_kw),
        scene=SceneSettings(**scene_kw),
    )


def config_from_dict(data: dict) -> RunConfig:
    """Rebuild a RunConfig from ``RunConfig.to_dict`` output (checkpoint blobs).

    Missing sections fall back to defaults so library-made checkpoints with
    partial blobs stay loadable.
    """
    seed = int(data.get("seed", 0))
    sampler = SamplerConfig(**data.get("sampler", {}))
    train_kw = dict(data.get("train", {}))
    train_kw.pop("seed", None)
    train_kw.pop("sampler", None)
    train = TrainConfig(seed=seed, sampler=sampler, **train_kw)
    return RunConfig(
        seed=seed,
        out_dir=str(data.get("out_dir", "runs/out")),
        train=train,
        rewards=RewardConfig(**data.get("rewards", {})),
        scene=SceneSettings(**data.get("scene", {})),
    )


def echo_config(cfg: RunConfig, out_dir: str) -> str:
    """Write the fully resolved configuration into the output directory."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.resolved.json")
    payload = dict(cfg.to_dict(), out_dir=cfg.out_dir, fingerprint=cfg.fingerprint)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path

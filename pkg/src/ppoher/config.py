"""Run configuration and its flat dotted-key representation.

Config files are YAML mappings of dotted keys (``ppo.lr: 3.0e-4``); the same
keys name sweep axes and CLI ``--set`` overrides.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ppoher.env import EnvConfig
from ppoher.her import HerConfig
from ppoher.ppo import PpoConfig

SECTIONS = {"env": EnvConfig, "ppo": PpoConfig, "her": HerConfig}


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    her: HerConfig = field(default_factory=HerConfig)
    total_timesteps: int = 300_000
    eval_every: int = 10_240
    eval_episodes: int = 100
    seed: int = 0
    run_id: str = "run"
    output_dir: str = "runs"
    hidden_sizes: tuple = (64, 64)
    record_wall_clock: bool = True

    def __post_init__(self):
        if self.total_timesteps < self.ppo.n_steps:
            raise ValueError("total_timesteps must be at least ppo.n_steps")
        if self.eval_every < self.ppo.n_steps:
            raise ValueError("eval_every must be at least ppo.n_steps")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))

    @property
    def algorithm(self) -> str:
        return "ppo" if self.her.strategy.value == "none" else "ppo-her"

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.run_id


def _plain(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return list(value)
    return value


def to_flat(cfg: RunConfig) -> dict:
    """Every resolved field, keyed by dotted path."""
    flat = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in SECTIONS:
            for sub in dataclasses.fields(value):
                flat[f"{f.name}.{sub.name}"] = _plain(getattr(value, sub.name))
        else:
            flat[f.name] = _plain(value)
    return flat


def _coerce(raw, current):
    if isinstance(current, (str, enum.Enum)):
        return str(raw)
    if isinstance(raw, str):
        if raw.strip().lower() in ("none", "null"):
            return None
        raw = yaml.safe_load(raw)
    if raw is None:
        return None
    if isinstance(current, bool):
        return bool(raw)
    if isinstance(current, int):
        value = float(raw)
        if not value.is_integer():
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(value)
    if isinstance(current, float):
        return float(raw)
    return raw


def from_flat(flat: dict, base: RunConfig | None = None) -> RunConfig:
    """Build a RunConfig from dotted keys layered over ``base`` (defaults if omitted)."""
    base = base if base is not None else RunConfig()
    sections = {name: {} for name in SECTIONS}
    top = {}
    known_top = {f.name for f in dataclasses.fields(RunConfig)} - set(SECTIONS)
    for key, raw in flat.items():
        head, _, rest = key.partition(".")
        if head in SECTIONS and rest:
            current_section = getattr(base, head)
            names = {f.name for f in dataclasses.fields(current_section)}
            if rest not in names:
                raise KeyError(f"unknown config key {key!r}")
            sections[head][rest] = _coerce(raw, getattr(current_section, rest))
        elif key in known_top:
            top[key] = _coerce(raw, getattr(base, key))
        else:
            raise KeyError(f"unknown config key {key!r}")
    kwargs = {name: dataclasses.replace(getattr(base, name), **vals) for name, vals in sections.items()}
    return dataclasses.replace(base, **kwargs, **top)


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form key=value")
        out[key.strip()] = value.strip()
    return out


def load_config(path, overrides=None) -> RunConfig:
    flat = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(flat, dict):
        raise ValueError(f"{path}: expected a mapping of dotted keys")
    flat.update(overrides or {})
    return from_flat(flat)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_flat(cfg), sort_keys=True)

"""Run configuration: one JSON document with world / detector / reward /
training / eval sections, mapped onto the dataclasses the modules consume."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .controllers import DetectorModel
from .episode import RewardConfig
from .memory import MemoryConfig
from .planner import TrainConfig


@dataclass
class WorldConfig:
    family: str = "desk"  # desk (8 small rooms) | house (30 full-size rooms)
    family_seed: int = 7
    dataset_seed: int = 11
    scale: float = 1.0 / 64
    test_scale: float = 1.0 / 16
    scan_every: int = 8
    mem_alpha: float = 0.5
    mem_tau: float = 0.5
    window: int = 5

    def memory(self) -> MemoryConfig:
        return MemoryConfig(alpha=self.mem_alpha, tau=self.mem_tau, window=self.window)


@dataclass
class EvalConfig:
    seed: int = 123
    mask_invalid: bool = False
    oracle_navigation: bool = False
    answer_mode: str = "memory"  # memory | observation
    oracle_alpha: float = 1.0  # memory alpha for the scripted/oracle arm


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    detector: DetectorModel = field(default_factory=DetectorModel)
    reward: RewardConfig = field(default_factory=RewardConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = ("world", "detector", "reward", "training", "eval")
_TYPES = {
    "world": WorldConfig,
    "detector": DetectorModel,
    "reward": RewardConfig,
    "training": TrainConfig,
    "eval": EvalConfig,
}


def config_to_dict(cfg: RunConfig) -> dict:
    return {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTIONS}


def config_from_dict(doc: dict) -> RunConfig:
    kwargs = {}
    for name in _SECTIONS:
        section = doc.get(name, {})
        cls = _TYPES[name]
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(section) - known
        if unknown:
            raise ValueError(f"config section {name!r}: unknown keys {sorted(unknown)}")
        kwargs[name] = cls(**section)
    return RunConfig(**kwargs)


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return config_from_dict(json.load(f))


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")

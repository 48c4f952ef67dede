"""Experiment configuration: an INI key/value file with a JSON mirror.

Values are JSON literals (numbers, lists, strings in quotes or bare).
Sections: ``[experiment]``, ``[env]``, ``[env.trajectory]``,
``[env.channel]``, ``[shift]``, ``[model]`` and ``[train]``.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import EnvConfig
from .envsim import config_hash
from .model import ModelConfig
from .trainer import TrainConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "dump_ini"]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    # overrides applied to ``env`` for the adapt / shift_test splits
    shift: dict = field(default_factory=lambda: {"blocker_size": [1.0, 0.6], "speed": 1.2})
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs"
    seeds: tuple = (0,)

    def __post_init__(self):
        unknown = set(self.shift) - {"blocker_size", "speed"}
        if unknown:
            raise ConfigError(f"unknown [shift] keys: {sorted(unknown)}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        self.seeds = tuple(int(s) for s in self.seeds)

    def env_for(self, split: str) -> EnvConfig:
        if split not in ("adapt", "shift_test"):
            return self.env
        env = dataclasses.replace(self.env)
        if "blocker_size" in self.shift:
            env.blocker_size = tuple(self.shift["blocker_size"])
        if "speed" in self.shift:
            env.trajectory = dataclasses.replace(env.trajectory, speed=float(self.shift["speed"]))
        return env

    def to_dict(self) -> dict:
        return {
            "experiment": {"out_dir": self.out_dir, "seeds": list(self.seeds)},
            "env": self.env.to_dict(),
            "shift": dict(self.shift),
            "model": self.model.to_dict(),
            "train": json.loads(json.dumps(self.train.to_dict())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"experiment", "env", "shift", "model", "train"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown sections: {sorted(extra)}")
        try:
            env = EnvConfig.from_dict(d.get("env", {}))
            model = ModelConfig(**d.get("model", {}))
            train = TrainConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.get("train", {}).items()})
            exp = d.get("experiment", {})
            return cls(
                env=env,
                shift=d.get("shift", cls().shift),
                model=model,
                train=train,
                out_dir=exp.get("out_dir", "runs"),
                seeds=tuple(exp.get("seeds", (0,))),
            )
        except TypeError as exc:  # unexpected keyword from a dataclass constructor
            raise ConfigError(str(exc)) from exc

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def write(self, directory, seed: int | None = None) -> None:
        """Store the exact config (INI and JSON) and the seed next to outputs."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.ini").write_text(dump_ini(self))
        (directory / "config.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        if seed is not None:
            (directory / "seed.txt").write_text(f"{int(seed)}\n")


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if raw.lower() in ("none", "null"):
            return None
        return raw


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    if path.suffix == ".json":
        return ExperimentConfig.from_dict(json.loads(path.read_text()))
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case (P_tot, K)
    cp.read(path)
    d: dict = {}
    for section in cp.sections():
        values = {k: _parse_value(v) for k, v in cp[section].items()}
        head, _, sub = section.partition(".")
        if sub:
            d.setdefault(head, {})[sub] = values
        else:
            d.setdefault(head, {}).update(values)
    return ExperimentConfig.from_dict(d)


def dump_ini(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    lines = []

    def section(name, values):
        lines.append(f"[{name}]")
        for k, v in values.items():
            lines.append(f"{k} = {json.dumps(v)}")
        lines.append("")

    section("experiment", d["experiment"])
    env = dict(d["env"])
    traj, chan = env.pop("trajectory"), env.pop("channel")
    section("env", env)
    section("env.trajectory", traj)
    section("env.channel", chan)
    section("shift", d["shift"])
    section("model", d["model"])
    section("train", d["train"])
    return "\n".join(lines)

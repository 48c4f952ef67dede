"""Seeded dataset generation and the JSON-lines episode container.

File layout: the first line is a header record (config, seed, split, count);
each following line is one episode. Arrays are base64-encoded little-endian
float32 (complex as interleaved re/im) with their shape alongside.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .envsim import (
    BlockerTrajectory,
    ChannelModelConfig,
    ChannelTensor,
    Episode,
    FactoryLayout,
    TrajectoryConfig,
    config_hash,
    generate_episode,
    random_layout,
)

__all__ = [
    "SPLITS",
    "EnvConfig",
    "episode_rng",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "node_position_sets",
]

SPLITS = {"train": 0, "test": 1, "adapt": 2, "shift_test": 3, "val": 4}
FORMAT = "airgnn-episodes/1"


@dataclass
class EnvConfig:
    """Everything needed to regenerate a dataset from a seed."""

    num_nodes: int = 10
    window: int = 5
    width: float = 20.0
    height: float = 15.0
    ap_position: tuple = (10.0, 14.0)
    node_region: tuple = (5.0, 1.0, 15.0, 5.0)
    min_separation: float = 0.5
    blocker_size: tuple = (2.0, 1.2)  # forklift-sized
    blocker_region: tuple | None = (5.0, 9.0, 15.0, 12.0)
    trajectory: TrajectoryConfig = field(default_factory=lambda: TrajectoryConfig(speed=2.5))
    # enough subcarriers for every K a model may use (models take the first K)
    channel: ChannelModelConfig = field(default_factory=lambda: ChannelModelConfig(num_subcarriers=16))

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        traj = TrajectoryConfig(**d.pop("trajectory", {}))
        chan = ChannelModelConfig(**d.pop("channel", {}))
        for key in ("ap_position", "node_region", "blocker_size", "blocker_region"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(trajectory=traj, channel=chan, **d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def hash(self) -> str:
        return config_hash(self.to_dict())


def episode_rng(seed: int, split: str, index: int) -> np.random.Generator:
    """Independent stream per (seed, split, episode index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), SPLITS[split], int(index)]))


def _one(cfg: EnvConfig, seed: int, split: str, index: int) -> Episode:
    rng = episode_rng(seed, split, index)
    layout = random_layout(
        cfg.num_nodes,
        rng,
        width=cfg.width,
        height=cfg.height,
        ap_position=tuple(cfg.ap_position),
        node_region=tuple(cfg.node_region),
        min_separation=cfg.min_separation,
        blocker_size=tuple(cfg.blocker_size),
        blocker_region=None if cfg.blocker_region is None else tuple(cfg.blocker_region),
    )
    ep = generate_episode(layout, cfg.trajectory, cfg.channel, cfg.window, rng)
    ep.config_hash = cfg.hash()
    ep.meta = {"seed": int(seed), "split": split, "index": int(index)}
    return ep


def generate_dataset(cfg: EnvConfig, count: int, split: str = "train", seed: int = 0, jobs: int = 1) -> list[Episode]:
    """``count`` episodes; node placements come from split-keyed streams."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_one, [cfg] * count, [seed] * count, [split] * count, range(count)))
    return [_one(cfg, seed, split, i) for i in range(count)]


def node_position_sets(episodes: Iterable[Episode]) -> set[bytes]:
    return {np.round(ep.layout.node_positions, 9).tobytes() for ep in episodes}


# ---------------------------------------------------------------------------
# file format


def _enc(arr: np.ndarray) -> dict:
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        flat = np.stack([arr.real, arr.imag], axis=-1).astype("<f4")
        return {"shape": list(arr.shape), "complex": True, "data": base64.b64encode(flat.tobytes()).decode()}
    return {"shape": list(arr.shape), "complex": False, "data": base64.b64encode(arr.astype("<f4").tobytes()).decode()}


def _dec(rec: dict) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(rec["data"]), dtype="<f4").astype(np.float64)
    if rec["complex"]:
        raw = raw.reshape(tuple(rec["shape"]) + (2,))
        return raw[..., 0] + 1j * raw[..., 1]
    return raw.reshape(rec["shape"])


def _episode_record(ep: Episode) -> dict:
    lay, tr, ch = ep.layout, ep.trajectory, ep.channels
    return {
        "type": "episode",
        "meta": ep.meta,
        "config_hash": ep.config_hash,
        "layout": {
            "width": lay.width,
            "height": lay.height,
            "ap_position": list(map(float, lay.ap_position)),
            "blocker_size": list(map(float, lay.blocker_size)),
            "blocker_region": None if lay.blocker_region is None else list(map(float, lay.blocker_region)),
            "node_positions": lay.node_positions.tolist(),
        },
        "trajectory": {
            "speed": tr.speed,
            "dt": tr.dt,
            "waypoints": tr.waypoints.tolist(),
            "positions": tr.positions.tolist(),
            "headings": tr.headings.tolist(),
        },
        "labels": ep.labels.astype(int).tolist(),
        "features": _enc(ep.features),
        "ap_gains": _enc(ch.ap_gains),
        "gains": _enc(ch.gains),
        "expected_sq_magnitude": _enc(ch.expected_sq_magnitude),
    }


def save_dataset(path, episodes: list[Episode], header: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = {"type": "header", "format": FORMAT, "count": len(episodes), **(header or {})}
    try:
        with open(path, "w") as fh:
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            for ep in episodes:
                fh.write(json.dumps(_episode_record(ep), sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"could not write dataset {path}: {exc}") from exc
    return path


def load_dataset(path) -> tuple[dict, list[Episode]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    episodes = []
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not an episode file")
        for line in fh:
            rec = json.loads(line)
            lay = rec["layout"]
            layout = FactoryLayout(
                lay["width"],
                lay["height"],
                tuple(lay["ap_position"]),
                np.array(lay["node_positions"]),
                tuple(lay["blocker_size"]),
                None if lay["blocker_region"] is None else tuple(lay["blocker_region"]),
            )
            tr = rec["trajectory"]
            traj = BlockerTrajectory(
                np.array(tr["waypoints"]), tr["speed"], tr["dt"], np.array(tr["positions"]), np.array(tr["headings"])
            )
            ch = ChannelTensor(_dec(rec["gains"]), _dec(rec["ap_gains"]), _dec(rec["expected_sq_magnitude"]))
            episodes.append(
                Episode(
                    layout,
                    traj,
                    ch,
                    _dec(rec["features"]),
                    np.array(rec["labels"], dtype=np.int8),
                    rec["config_hash"],
                    rec.get("meta", {}),
                )
            )
    return header, episodes

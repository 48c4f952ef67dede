"""Synthetic factory-floor episodes: geometry, blocker mobility, labels, channels.

A 2-D parametric stand-in for a ray-traced digital twin. Large-scale gain is
free-space path loss plus a fixed penalty when the link segment crosses the
blocker footprint; small-scale fading is Rician (LOS) or Rayleigh (NLOS),
drawn independently per subcarrier and time step.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "SPEED_OF_LIGHT",
    "ConfigurationError",
    "FactoryLayout",
    "BlockerTrajectory",
    "ChannelModelConfig",
    "TrajectoryConfig",
    "ChannelTensor",
    "Episode",
    "random_layout",
    "generate_trajectory",
    "los_blocked",
    "segments_blocked",
    "fspl_gain",
    "channel_gain",
    "generate_episode",
    "feature_windows",
    "window_index",
]

SPEED_OF_LIGHT = 299_792_458.0


class ConfigurationError(ValueError):
    """Raised when an environment configuration cannot be realised."""


@dataclass
class FactoryLayout:
    width: float
    height: float
    ap_position: tuple[float, float]
    node_positions: np.ndarray
    blocker_size: tuple[float, float] = (1.0, 0.8)
    # (xmin, ymin, xmax, ymax) the blocker centre roams in; None = whole floor
    blocker_region: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        self.node_positions = np.asarray(self.node_positions, dtype=float)
        pts = self.node_positions
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ConfigurationError("need at least two 2-D node positions")
        allpts = np.vstack([pts, np.asarray(self.ap_position, float)[None]])
        if (allpts < 0).any() or (allpts[:, 0] > self.width).any() or (allpts[:, 1] > self.height).any():
            raise ConfigurationError("positions must lie inside the floor")
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(dist, np.inf)
        if dist.min() <= 0:
            raise ConfigurationError("node positions must be pairwise distinct")

    @property
    def num_nodes(self) -> int:
        return self.node_positions.shape[0]


@dataclass
class TrajectoryConfig:
    speed: float = 1.0
    dt: float = 0.3
    steps: int = 50


@dataclass
class BlockerTrajectory:
    waypoints: np.ndarray
    speed: float
    dt: float
    positions: np.ndarray  # (T, 2)
    headings: np.ndarray  # (T,)

    @property
    def poses(self) -> list[tuple[np.ndarray, float]]:
        return [(p, h) for p, h in zip(self.positions, self.headings)]

    @property
    def num_steps(self) -> int:
        return len(self.headings)


@dataclass
class ChannelModelConfig:
    carrier_freq_hz: float = 28e9
    subcarrier_bandwidth_hz: float = 400e3
    guard_band_hz: float = 100e3
    num_subcarriers: int = 4
    nlos_extra_loss_db: float = 20.0
    rician_k_factor_db: float = 10.0
    noise_power_sigma2: float = 1e-12

    def __post_init__(self):
        if self.num_subcarriers < 1:
            raise ConfigurationError("num_subcarriers must be >= 1")
        if self.noise_power_sigma2 <= 0:
            raise ConfigurationError("noise power must be positive")

    @property
    def subcarrier_freqs(self) -> np.ndarray:
        k = np.arange(self.num_subcarriers)
        return self.carrier_freq_hz + k * (self.subcarrier_bandwidth_hz + self.guard_band_hz)


@dataclass
class ChannelTensor:
    gains: np.ndarray  # complex (N, N, K, T)
    ap_gains: np.ndarray  # complex (N, T)
    expected_sq_magnitude: np.ndarray  # real (N, N, K, T), zero on the diagonal


@dataclass
class Episode:
    layout: FactoryLayout
    trajectory: BlockerTrajectory
    channels: ChannelTensor
    features: np.ndarray  # (N, T, L)
    labels: np.ndarray  # (N, T) int8, 1 = NLOS
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return self.labels.shape[0]

    @property
    def num_steps(self) -> int:
        return self.labels.shape[1]

    @property
    def window(self) -> int:
        return self.features.shape[2]


def config_hash(*blocks) -> str:
    """Short stable hash of dataclass/dict configuration blocks."""
    payload = []
    for b in blocks:
        if hasattr(b, "__dataclass_fields__"):
            b = asdict(b)
        payload.append(b)
    text = json.dumps(payload, sort_keys=True, default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


# ---------------------------------------------------------------------------
# geometry


def random_layout(
    n: int,
    rng: np.random.Generator,
    width: float = 20.0,
    height: float = 15.0,
    ap_position: tuple[float, float] = (10.0, 14.0),
    node_region: tuple[float, float, float, float] = (1.0, 1.0, 19.0, 6.0),
    min_separation: float = 0.5,
    blocker_size: tuple[float, float] = (1.0, 0.8),
    blocker_region: tuple[float, float, float, float] | None = (5.0, 9.0, 15.0, 12.0),
    max_tries: int = 10_000,
) -> FactoryLayout:
    """Place ``n`` nodes uniformly in ``node_region`` with a minimum separation.

    The default geometry is a production line along the bottom wall, the AP on
    the opposite wall, and an AMR aisle in between that every node-AP link
    crosses.
    """
    x0, y0, x1, y1 = node_region
    pts: list[np.ndarray] = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > max_tries:
            raise ConfigurationError(f"could not place {n} nodes with separation {min_separation} m")
        p = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        if all(np.hypot(*(p - q)) >= min_separation for q in pts):
            pts.append(p)
    return FactoryLayout(width, height, ap_position, np.array(pts), blocker_size, blocker_region)


def _roam_box(layout: FactoryLayout) -> tuple[float, float, float, float]:
    half = 0.5 * float(np.hypot(*layout.blocker_size))
    x0, y0, x1, y1 = layout.blocker_region or (0.0, 0.0, layout.width, layout.height)
    x0, y0 = max(x0, half), max(y0, half)
    x1, y1 = min(x1, layout.width - half), min(y1, layout.height - half)
    if x1 <= x0 or y1 <= y0:
        raise ConfigurationError("layout too small to place the blocker footprint")
    return x0, y0, x1, y1


def generate_trajectory(
    layout: FactoryLayout,
    speed: float,
    dt: float,
    steps: int,
    rng: np.random.Generator,
) -> BlockerTrajectory:
    """Random-waypoint path sampled every ``dt`` seconds at constant speed."""
    if speed <= 0:
        raise ConfigurationError("blocker speed must be positive")
    if dt <= 0 or steps < 1:
        raise ConfigurationError("need dt > 0 and at least one step")
    x0, y0, x1, y1 = _roam_box(layout)

    def draw():
        return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])

    waypoints = [draw()]
    pos = waypoints[0].copy()
    target = draw()
    waypoints.append(target)
    heading = float(np.arctan2(*(target - pos)[::-1]))
    positions = [pos.copy()]
    headings = [heading]
    step_len = speed * dt
    for _ in range(steps - 1):
        remaining = step_len
        while remaining > 0:
            delta = target - pos
            dist = float(np.hypot(*delta))
            if dist < 1e-12:
                target = draw()
                waypoints.append(target)
                continue
            heading = float(np.arctan2(delta[1], delta[0]))
            if dist <= remaining:
                pos = target.copy()
                remaining -= dist
                target = draw()
                waypoints.append(target)
            else:
                pos = pos + delta / dist * remaining
                remaining = 0.0
        positions.append(pos.copy())
        headings.append(heading)
    return BlockerTrajectory(np.array(waypoints), speed, dt, np.array(positions), np.array(headings))


def los_blocked(p_a, p_b, blocker_pose, size) -> bool:
    """True iff segment ``p_a``-``p_b`` intersects the oriented blocker rectangle."""
    p_a = np.asarray(p_a, float)
    p_b = np.asarray(p_b, float)
    if np.allclose(p_a, p_b):
        raise ValueError("segment endpoints must differ")
    center, heading = blocker_pose
    return bool(segments_blocked(p_a[None], p_b[None], np.asarray(center, float), float(heading), size)[0])


def segments_blocked(a: np.ndarray, b: np.ndarray, center, heading: float, size) -> np.ndarray:
    """Vectorised segment/oriented-rectangle test (Liang-Barsky clipping).

    ``a`` and ``b`` are (..., 2) endpoint arrays; returns a boolean array of
    the broadcast leading shape.
    """
    c, s = np.cos(heading), np.sin(heading)
    rot = np.array([[c, s], [-s, c]])  # world -> blocker frame
    pa = (np.asarray(a, float) - center) @ rot.T
    pb = (np.asarray(b, float) - center) @ rot.T
    half = np.array([size[0], size[1]], float) / 2
    d = pb - pa
    t0 = np.zeros(pa.shape[:-1])
    t1 = np.ones(pa.shape[:-1])
    ok = np.ones(pa.shape[:-1], bool)
    for ax in range(2):
        for p, q in ((-d[..., ax], pa[..., ax] + half[ax]), (d[..., ax], half[ax] - pa[..., ax])):
            parallel = np.abs(p) < 1e-15
            ok &= ~(parallel & (q < 0))
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(parallel, 0.0, q / np.where(parallel, 1.0, p))
            enter = ~parallel & (p < 0)
            leave = ~parallel & (p > 0)
            t0 = np.where(enter, np.maximum(t0, r), t0)
            t1 = np.where(leave, np.minimum(t1, r), t1)
    return ok & (t0 <= t1)


# ---------------------------------------------------------------------------
# channel


def fspl_gain(distance, freq_hz):
    """Free-space power gain (c / 4 pi d f)^2."""
    return (SPEED_OF_LIGHT / (4 * np.pi * np.asarray(distance, float) * np.asarray(freq_hz, float))) ** 2


def _small_scale(blocked: np.ndarray, k_factor: float, rng: np.random.Generator) -> np.ndarray:
    # unit mean-power fading: Rician with LOS phase uniform, Rayleigh when blocked
    shape = blocked.shape
    scatter = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    los_phase = np.exp(1j * rng.uniform(0, 2 * np.pi, shape))
    rician = np.sqrt(k_factor / (k_factor + 1)) * los_phase + np.sqrt(1 / (k_factor + 1)) * scatter
    return np.where(blocked, scatter, rician)


def channel_gain(
    distance,
    blocked,
    freq_hz,
    cfg: ChannelModelConfig,
    rng: np.random.Generator | None = None,
    fading: bool = True,
):
    """Complex gain and fading-averaged |h|^2 for one or many links.

    Without fading the gain is the deterministic large-scale amplitude with a
    uniform random phase (zero phase if no ``rng`` is given).
    """
    distance = np.asarray(distance, float)
    if np.any(distance <= 0):
        raise ValueError("distance must be positive")
    blocked = np.asarray(blocked, bool)
    shape = np.broadcast_shapes(distance.shape, np.shape(freq_hz), blocked.shape)
    blocked = np.broadcast_to(blocked, shape)
    expected = fspl_gain(distance, freq_hz) * np.where(blocked, 10 ** (-cfg.nlos_extra_loss_db / 10), 1.0)
    if fading:
        if rng is None:
            raise ValueError("fading requires an rng")
        small = _small_scale(blocked, 10 ** (cfg.rician_k_factor_db / 10), rng)
    elif rng is not None:
        small = np.exp(1j * rng.uniform(0, 2 * np.pi, blocked.shape))
    else:
        small = np.ones(blocked.shape, complex)
    gain = np.sqrt(expected) * small
    if gain.ndim == 0:
        return complex(gain), float(expected)
    return gain, expected


# ---------------------------------------------------------------------------
# episodes


def window_index(steps: int, window: int) -> np.ndarray:
    """(T, L) time indices [t, t-1, ..., t-L+1], clamped at the first sample."""
    t = np.arange(steps)[:, None] - np.arange(window)[None, :]
    return np.maximum(t, 0)


def feature_windows(ap_gains: np.ndarray, window: int) -> np.ndarray:
    """Sliding windows of |h_AP|, most recent first, shape (N, T, L)."""
    mag = np.abs(ap_gains)
    return mag[:, window_index(mag.shape[1], window)]


def generate_episode(
    layout: FactoryLayout,
    traj_cfg: TrajectoryConfig,
    chan_cfg: ChannelModelConfig,
    window: int,
    rng: np.random.Generator,
    trajectory: BlockerTrajectory | None = None,
) -> Episode:
    if window < 1:
        raise ConfigurationError("window L must be >= 1")
    if traj_cfg.steps < window:
        raise ConfigurationError("need T >= L")
    if trajectory is None:
        trajectory = generate_trajectory(layout, traj_cfg.speed, traj_cfg.dt, traj_cfg.steps, rng)
    pts = layout.node_positions
    n, steps = len(pts), trajectory.num_steps
    ap = np.asarray(layout.ap_position, float)
    freqs = chan_cfg.subcarrier_freqs
    nk = len(freqs)

    iu, ju = np.triu_indices(n, 1)
    pair_a, pair_b = pts[iu], pts[ju]
    ap_blocked = np.empty((n, steps), bool)
    pair_blocked = np.empty((len(iu), steps), bool)
    for t in range(steps):
        c, h = trajectory.positions[t], trajectory.headings[t]
        ap_blocked[:, t] = segments_blocked(pts, np.broadcast_to(ap, pts.shape), c, h, layout.blocker_size)
        pair_blocked[:, t] = segments_blocked(pair_a, pair_b, c, h, layout.blocker_size)

    # node-AP links at the carrier
    ap_dist = np.hypot(*(pts - ap).T)
    ap_gains, _ = channel_gain(ap_dist[:, None], ap_blocked, chan_cfg.carrier_freq_hz, chan_cfg, rng)

    # inter-node links: fading drawn independently per subcarrier, reciprocal
    pair_dist = np.hypot(*(pair_a - pair_b).T)
    pg, pe = channel_gain(
        pair_dist[:, None, None],
        pair_blocked[:, None, :],
        freqs[None, :, None],
        chan_cfg,
        rng,
    )
    gains = np.zeros((n, n, nk, steps), complex)
    expected = np.zeros((n, n, nk, steps))
    gains[iu, ju], gains[ju, iu] = pg, pg
    expected[iu, ju], expected[ju, iu] = pe, pe

    channels = ChannelTensor(gains, ap_gains, expected)
    return Episode(
        layout=layout,
        trajectory=trajectory,
        channels=channels,
        features=feature_windows(ap_gains, window),
        labels=ap_blocked.astype(np.int8),
        config_hash=config_hash(traj_cfg, chan_cfg, {"window": window, "size": layout.blocker_size}),
    )

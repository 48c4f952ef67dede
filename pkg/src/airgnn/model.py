"""Over-the-air spatio-temporal GNN and its digital/local baselines.

All models run on a batch of equal-size episodes laid out as
``(B, T, N, ...)``; channel arrays are ``(B, T, K, N_tx, N_rx)``.

Signals are real-valued: the complex channel enters through its magnitude
(perfect phase synchronisation) and receiver noise is real Gaussian with
variance ``sigma2`` per component. Each node transmits amplitude
``sqrt(p_k)`` times a unit-norm row, so the power on subcarrier ``k`` is
``p_k``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import topology
from .diffcore import ParameterStore, init_linear, init_lstm, init_mlp, linear, lstm_unroll, mlp, softmax_power_head
from .diffcore import tensor as T
from .diffcore.tensor import Tensor
from .envsim import Episode

__all__ = [
    "MODEL_KINDS",
    "ALLOCATION_MODES",
    "ModelConfig",
    "EpisodeBatch",
    "ConstraintMonitor",
    "ForwardResult",
    "init_params",
    "normalize_features",
    "encode",
    "allocate_power",
    "transmit",
    "ota_aggregate",
    "decode",
    "digital_graph",
    "forward",
    "forward_episode",
    "baseline_local_lstm",
    "baseline_stgcn",
    "baseline_stgat",
    "calibrate",
    "PARAM_GROUPS",
]

MODEL_KINDS = ("airgnn", "local", "stgcn", "stgat")
ALLOCATION_MODES = ("learned", "uniform", "random")
NORM_EPS = 1e-12

# parameter-name prefixes of the transmitter (encoder/resource manager) and receiver
PARAM_GROUPS = {"encoder": ("phi.", "psi.", "gnn."), "decoder": ("chi.",)}


@dataclass
class ModelConfig:
    kind: str = "airgnn"
    K: int = 4
    d: int = 8
    L: int = 5
    P_tot: float = 1e-3
    sigma2: float = 1e-12
    gamma_min: float = 10.0
    weight_sharing: str = "shared"
    allocation_mode: str = "learned"
    hidden: int = 32
    lstm_hidden: int = 64
    lstm_layers: int = 2
    num_nodes: int | None = None
    # fixed input/receiver normalisation, set by ``calibrate``
    feature_offset_db: float = -80.0
    feature_scale_db: float = 10.0
    rx_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.K < 1 or self.d < 1 or self.L < 1:
            raise ValueError("K, d and L must be >= 1")
        if self.P_tot <= 0:
            raise ValueError("P_tot must be positive")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if self.allocation_mode not in ALLOCATION_MODES:
            raise ValueError(f"unknown allocation mode {self.allocation_mode!r}")
        if self.weight_sharing not in ("shared", "per_node"):
            raise ValueError("weight_sharing must be 'shared' or 'per_node'")
        if self.weight_sharing == "per_node" and not self.num_nodes:
            raise ValueError("per-node weights need num_nodes")

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


@dataclass
class EpisodeBatch:
    features: np.ndarray  # (B, T, N, L) raw |h_AP| windows
    labels: np.ndarray  # (B, T, N)
    hmag: np.ndarray  # (B, T, K, N, N) [k, tx, rx]
    gexp: np.ndarray  # (B, T, K, N, N)

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode]) -> "EpisodeBatch":
        n = {ep.num_nodes for ep in episodes}
        if len(n) != 1 or len({ep.num_steps for ep in episodes}) != 1:
            raise ValueError("batched episodes must share N and T")
        feats = np.stack([ep.features.transpose(1, 0, 2) for ep in episodes])
        labels = np.stack([ep.labels.T for ep in episodes])
        # stored [i][j][k][t] -> [t][k][i=tx][j=rx]
        hmag = np.stack([np.abs(ep.channels.gains).transpose(3, 2, 0, 1) for ep in episodes])
        gexp = np.stack([ep.channels.expected_sq_magnitude.transpose(3, 2, 0, 1) for ep in episodes])
        return cls(feats, labels.astype(np.float64), hmag, gexp)

    @property
    def shape(self):
        B, T_, N, L = self.features.shape
        return B, T_, N, L

    def first_subcarriers(self, K: int) -> "EpisodeBatch":
        """View restricted to subcarriers 0..K-1 of the stored channels."""
        if self.hmag.shape[2] < K:
            raise ValueError(f"model uses K={K} subcarriers but the channels only have {self.hmag.shape[2]}")
        if self.hmag.shape[2] == K:
            return self
        return EpisodeBatch(self.features, self.labels, self.hmag[:, :, :K], self.gexp[:, :, :K])

    def take_nodes(self, perm: np.ndarray) -> "EpisodeBatch":
        """Relabel nodes: new node ``a`` is old node ``perm[a]``."""
        return EpisodeBatch(
            self.features[:, :, perm],
            self.labels[:, :, perm],
            self.hmag[..., perm, :][..., perm],
            self.gexp[..., perm, :][..., perm],
        )


class ConstraintMonitor:
    """Checks every power vector and message row that passes through a forward."""

    def __init__(self, p_tot: float, rtol: float = 1e-9):
        self.p_tot = p_tot
        self.rtol = rtol
        self.forward_passes = 0
        self.power_vectors = 0
        self.max_budget_error = 0.0
        self.min_power = np.inf
        self.max_norm_error = 0.0
        self.violations: list[str] = []

    def __call__(self, p: np.ndarray, m: np.ndarray | None, steps: int) -> None:
        self.forward_passes += steps
        self.power_vectors += int(np.prod(p.shape[:-1]))
        err = float(np.max(np.abs(p.sum(axis=-1) - self.p_tot)) / self.p_tot)
        self.max_budget_error = max(self.max_budget_error, err)
        self.min_power = min(self.min_power, float(p.min()))
        if err > self.rtol:
            self.violations.append(f"power budget off by {err:.3e} (relative)")
        if p.min() < 0:
            self.violations.append(f"negative power {p.min():.3e}")
        if m is not None:
            nerr = float(np.max(np.abs(np.linalg.norm(m, axis=-1) - 1.0)))
            self.max_norm_error = max(self.max_norm_error, nerr)
            if nerr > self.rtol:
                self.violations.append(f"message row norm off by {nerr:.3e}")

    @property
    def ok(self) -> bool:
        return not self.violations


# ---------------------------------------------------------------------------
# parameters


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ParameterStore:
    store = ParameterStore()
    pn = cfg.num_nodes if cfg.weight_sharing == "per_node" else None
    if cfg.kind == "airgnn":
        init_mlp(store, "phi", [cfg.L, cfg.hidden, cfg.K * cfg.d], rng, pn)
        if cfg.allocation_mode == "learned":
            init_mlp(store, "psi", [cfg.L, cfg.hidden, cfg.K], rng, pn)
        state_dim = cfg.L + cfg.K * cfg.d
    elif cfg.kind in ("stgcn", "stgat"):
        init_mlp(store, "gnn.enc", [cfg.L, cfg.hidden, cfg.d], rng, pn)
        if cfg.kind == "stgat":
            init_linear(store, "gnn.att_src", cfg.d, 1, rng, pn)
            init_linear(store, "gnn.att_dst", cfg.d, 1, rng, pn)
        state_dim = cfg.L + cfg.d
    else:
        state_dim = cfg.L
    sizes = [state_dim] + [cfg.lstm_hidden] * cfg.lstm_layers
    for layer in range(cfg.lstm_layers):
        init_lstm(store, f"chi.lstm.{layer}", sizes[layer], sizes[layer + 1], rng, pn)
    init_linear(store, "chi.out", cfg.lstm_hidden, 1, rng, pn)
    return store


# ---------------------------------------------------------------------------
# building blocks


def normalize_features(x_raw: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Fixed dB standardisation of |h_AP| windows (no trainable state)."""
    db = 20.0 * np.log10(np.maximum(np.asarray(x_raw, float), 1e-30))
    return (db - cfg.feature_offset_db) / cfg.feature_scale_db


def encode(x, params: ParameterStore, cfg: ModelConfig) -> Tensor:
    """Message block (..., K, d) with every per-subcarrier row scaled to unit norm."""
    raw = mlp(x, params, "phi")
    raw = T.reshape(raw, raw.shape[:-1] + (cfg.K, cfg.d))
    return T.l2_normalize(raw, NORM_EPS)


def allocate_power(x, params: ParameterStore | None, mode: str, p_tot: float, rng=None, K: int | None = None) -> Tensor:
    """Power vector (..., K) with p >= 0 and sum(p) = p_tot."""
    if p_tot <= 0:
        raise ValueError("p_tot must be positive")
    x = T.as_tensor(x)
    if mode == "learned":
        return softmax_power_head(mlp(x, params, "psi"), p_tot)
    lead = x.shape[:-1]
    if K is None:
        raise ValueError("fixed allocations need K")
    if mode == "uniform":
        return Tensor(np.full(lead + (K,), p_tot / K))
    if mode == "random":
        if rng is None:
            raise ValueError("random allocation needs an rng")
        return Tensor(p_tot * rng.dirichlet(np.ones(K), size=lead))
    raise ValueError(f"unknown allocation mode {mode!r}")


def transmit(m, p) -> Tensor:
    """Per-subcarrier amplitude scaling: row k of ``m`` times sqrt(p_k)."""
    p = T.as_tensor(p)
    if np.any(p.data < 0):
        raise ValueError("negative transmit power")
    amp = T.sqrt(p)
    return T.mul(m, T.reshape(amp, amp.shape + (1,)))


def ota_aggregate(
    x_tilde,
    hmag: np.ndarray,
    mask: np.ndarray,
    sigma2: float,
    rng: np.random.Generator | None = None,
    powers: np.ndarray | None = None,
) -> Tensor:
    """Superpose neighbour signals through |h| on each subcarrier and add noise.

    ``x_tilde`` is (..., N, K, d); ``hmag`` and ``mask`` are (..., K, N_tx, N_rx).
    Returns the received block (..., N_rx, K, d).
    """
    x_tilde = T.as_tensor(x_tilde)
    mask = np.asarray(mask, bool)
    if powers is not None:
        tx_off = np.swapaxes(np.asarray(powers) <= 0, -1, -2)[..., :, :, None]  # (..., K, N_tx, 1)
        if np.any(mask & tx_off):
            raise ValueError("edge mask contains links from transmitters with zero power")
    weights = np.swapaxes(np.where(mask, hmag, 0.0), -1, -2)  # (..., K, rx, tx)
    xt = T.transpose(x_tilde, _swap_last3(x_tilde.ndim))  # (..., K, N, d)
    y = T.matmul(weights, xt)  # (..., K, N_rx, d)
    if sigma2 > 0:
        if rng is None:
            raise ValueError("noisy aggregation needs an rng")
        y = T.add_noise(y, rng.normal(0.0, np.sqrt(sigma2), size=y.shape))
    return T.transpose(y, _swap_last3(y.ndim))


def _swap_last3(ndim: int) -> tuple:
    # (..., a, b, c) <-> (..., b, a, c)
    axes = list(range(ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return tuple(axes)


def _windows(s: Tensor, L: int, n_out: int) -> list[Tensor]:
    """Chronological window inputs; step ``l`` of output ``t`` is state ``t - L + 1 + l``.

    Times before 0 repeat the first state. ``s`` is (B, T, N, D).
    """
    if L > 1:
        first = s[:, 0:1]
        s = T.concat([first] * (L - 1) + [s], axis=1)
    return [s[:, l : l + n_out] for l in range(L)]


def decode(window: Sequence, params: ParameterStore, cfg: ModelConfig) -> Tensor:
    """Stacked LSTM over the window, last hidden state -> linear -> sigmoid."""
    hs = lstm_unroll(window, params, "chi.lstm", cfg.lstm_layers)
    logit = linear(hs[-1], params, "chi.out")
    return T.sigmoid(T.reshape(logit, logit.shape[:-1]))


def digital_graph(gexp: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Ideal digital neighbourhoods: union over k of edges at uniform power P_tot/K.

    ``gexp`` (..., K, N, N) -> bool (..., N_tx, N_rx).
    """
    lead = gexp.shape[:-3]
    n = gexp.shape[-1]
    p = np.full(lead + (n, cfg.K), cfg.P_tot / cfg.K)
    return topology.edge_masks(p, gexp, cfg.sigma2 if cfg.sigma2 > 0 else 1e-30, cfg.gamma_min).any(axis=-3)


@dataclass
class ForwardResult:
    pred: Tensor  # (B, T - tau, N)
    targets: np.ndarray  # (B, T - tau, N)
    powers: np.ndarray | None = None  # (B, T, N, K)
    masks: np.ndarray | None = None  # (B, T, K, N, N)
    extras: dict = field(default_factory=dict)


def _check_tau(T_: int, tau: int) -> int:
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if tau >= T_:
        raise ValueError(f"horizon tau={tau} must be smaller than T={T_}")
    return T_ - tau


def _air_states(batch, params, cfg, rng, masks, monitor, x):
    B, T_, N, _ = batch.shape
    m = encode(x, params, cfg)
    p = allocate_power(x, params if cfg.allocation_mode == "learned" else None, cfg.allocation_mode, cfg.P_tot, rng, cfg.K)
    if monitor is not None:
        monitor(p.data, m.data, B * T_)
    if masks is None:
        # sensitivity threshold is not differentiated: the mask is a constant
        sig = cfg.sigma2 if cfg.sigma2 > 0 else 1e-30
        masks = topology.edge_masks(p.data, batch.gexp, sig, cfg.gamma_min)
    xt = transmit(m, p)
    y = ota_aggregate(xt, batch.hmag, masks, cfg.sigma2, rng)
    y = T.scale(y, 1.0 / cfg.rx_scale)
    y = T.reshape(y, (B, T_, N, cfg.K * cfg.d))
    return T.concat([x, y], axis=-1), p.data, masks, {"messages": m.data}


def _gnn_states(batch, params, cfg, x, attention: bool):
    e = T.tanh(mlp(x, params, "gnn.enc"))  # (B, T, N, d)
    adj = digital_graph(batch.gexp, cfg)  # (B, T, tx, rx)
    n = adj.shape[-1]
    if attention:
        allowed = np.swapaxes(adj, -1, -2) | np.eye(n, dtype=bool)  # (rx, tx), self included
        src = linear(e, params, "gnn.att_src")  # (B, T, N, 1)
        dst = linear(e, params, "gnn.att_dst")
        score = T.leaky_relu(T.add(dst, T.transpose(src, (0, 1, 3, 2))))  # [rx, tx]
        alpha = T.softmax(T.add(score, np.where(allowed, 0.0, -1e9)))
        agg = T.matmul(alpha, e)
        extras = {"attention": alpha.data, "adjacency": adj}
    else:
        a_rx = np.swapaxes(adj, -1, -2).astype(float)  # (rx, tx)
        deg = a_rx.sum(axis=-1, keepdims=True)
        agg = T.matmul(a_rx / np.maximum(deg, 1.0), e)
        extras = {"adjacency": adj}
    return T.concat([x, agg], axis=-1), extras


def forward(
    batch: EpisodeBatch,
    params: ParameterStore,
    cfg: ModelConfig,
    tau: int,
    rng: np.random.Generator | None = None,
    masks: np.ndarray | None = None,
    monitor: Callable | None = None,
) -> ForwardResult:
    """Predict y[t + tau] for every node and every t < T - tau.

    Per time step: encode, allocate, threshold edges, transmit, superpose,
    combine with local features, then decode the last L combined states.
    """
    B, T_, N, _ = batch.shape
    n_out = _check_tau(T_, tau)
    batch = batch.first_subcarriers(cfg.K)
    if batch.features.shape[-1] != cfg.L:
        raise ValueError(f"episodes carry windows of {batch.features.shape[-1]} samples but the model expects L={cfg.L}")
    x = Tensor(normalize_features(batch.features, cfg))
    powers = extras = None
    if cfg.kind == "airgnn":
        s, powers, masks, extras = _air_states(batch, params, cfg, rng, masks, monitor, x)
    elif cfg.kind == "local":
        s, extras = x, {}
    else:
        s, extras = _gnn_states(batch, params, cfg, x, attention=cfg.kind == "stgat")
    pred = decode(_windows(s, cfg.L, n_out), params, cfg)
    return ForwardResult(pred, batch.labels[:, tau:], powers, masks, extras)


def forward_episode(episode: Episode, params, cfg: ModelConfig, tau: int, rng=None, **kw) -> np.ndarray:
    """Predictions for a single episode as an (N, T - tau) array."""
    res = forward(EpisodeBatch.from_episodes([episode]), params, cfg, tau, rng, **kw)
    return res.pred.data[0].T


def baseline_local_lstm(episode: Episode, params, cfg: ModelConfig, tau: int) -> np.ndarray:
    return forward_episode(episode, params, replace(cfg, kind="local"), tau)


def baseline_stgcn(episode: Episode, params, cfg: ModelConfig, tau: int) -> np.ndarray:
    return forward_episode(episode, params, replace(cfg, kind="stgcn"), tau)


def baseline_stgat(episode: Episode, params, cfg: ModelConfig, tau: int) -> np.ndarray:
    return forward_episode(episode, params, replace(cfg, kind="stgat"), tau)


def calibrate(cfg: ModelConfig, episodes: Sequence[Episode]) -> ModelConfig:
    """Fit the fixed feature standardisation and receiver scale on training data.

    The receiver scale is the RMS per-component amplitude a node would see
    under uniform allocation (signal plus noise), so decoder inputs are O(1).
    """
    db = np.concatenate([20 * np.log10(np.abs(ep.channels.ap_gains).ravel()) for ep in episodes])
    sig_pow = []
    for ep in episodes:
        g = ep.channels.expected_sq_magnitude.transpose(3, 2, 0, 1)[:, : cfg.K]  # (T, K, tx, rx)
        h2 = np.abs(ep.channels.gains.transpose(3, 2, 0, 1)[:, : cfg.K]) ** 2
        p = np.full((g.shape[0], g.shape[2], cfg.K), cfg.P_tot / cfg.K)
        mask = topology.edge_masks(p, g, max(cfg.sigma2, 1e-30), cfg.gamma_min)
        sig_pow.append((np.where(mask, h2, 0.0).sum(axis=-2) * cfg.P_tot / cfg.K).ravel())
    rx_pow = float(np.mean(np.concatenate(sig_pow))) / cfg.d + cfg.sigma2
    return replace(
        cfg,
        feature_offset_db=float(db.mean()),
        feature_scale_db=float(db.std() or 1.0),
        rx_scale=float(np.sqrt(rx_pow)) if rx_pow > 0 else 1.0,
    )

"""Analog emulation of a generic message-passing network over orthogonal subcarriers.

Construction: colour the conflict graph so that every receiver hears each
in-neighbour on its own subcarrier, invert each link's channel so the
received amplitude is exactly ``P_rx`` times the message, then divide by
``P_rx`` at the receiver and apply the digital aggregation and update on the
recovered messages. With enough subcarriers the only error left is receiver
noise, whose per-component variance after rescaling is ``sigma2 / P_rx**2``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .topology import build_conflict_graph, exact_coloring

__all__ = [
    "AGGREGATORS",
    "MPNNSpec",
    "FrequencyAssignment",
    "AssignmentError",
    "EmulationReport",
    "random_mpnn",
    "digital_mpnn",
    "assign_frequencies",
    "channel_inversion_power",
    "analog_mpnn",
    "emulate_mpnn",
]

AGGREGATORS = ("sum", "mean", "max")
H_FLOOR = 1e-6


class AssignmentError(KeyError):
    pass


def _mlp(x: np.ndarray, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    for i, (W, b) in enumerate(layers):
        x = x @ W + b
        if i < len(layers) - 1:
            x = np.tanh(x)
    return x


@dataclass
class MPNNSpec:
    """Message MLP on concat(u_i, u_j), aggregation, update MLP on concat(u_i, agg)."""

    d: int
    d_msg: int
    aggregator: str
    message_layers: list
    update_layers: list

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.message_layers[0][0].shape[0] != 2 * self.d or self.message_layers[-1][0].shape[1] != self.d_msg:
            raise ValueError("message MLP dimensions do not match (2d -> d_msg)")
        if self.update_layers[0][0].shape[0] != self.d + self.d_msg:
            raise ValueError("update MLP input must be d + d_msg")

    def message(self, u_rx: np.ndarray, u_tx: np.ndarray) -> np.ndarray:
        return _mlp(np.concatenate([u_rx, u_tx], axis=-1), self.message_layers)

    def aggregate(self, msgs: np.ndarray, axis: int = 0) -> np.ndarray:
        if self.aggregator == "sum":
            return msgs.sum(axis=axis)
        if self.aggregator == "mean":
            return msgs.mean(axis=axis)
        return msgs.max(axis=axis)

    def update(self, u: np.ndarray, agg: np.ndarray) -> np.ndarray:
        return _mlp(np.concatenate([u, agg], axis=-1), self.update_layers)


def random_mpnn(d: int, d_msg: int, hidden: int, aggregator: str, rng: np.random.Generator) -> MPNNSpec:
    def layer(a, b):
        return rng.normal(0, 1 / np.sqrt(a), (a, b)), rng.normal(0, 0.1, b)

    msg = [layer(2 * d, hidden), layer(hidden, d_msg)]
    upd = [layer(d + d_msg, hidden), layer(hidden, d)]
    return MPNNSpec(d, d_msg, aggregator, msg, upd)


def _in_edges(adj: np.ndarray) -> list[list[int]]:
    adj = np.asarray(adj, bool)
    return [list(np.flatnonzero(adj[:, i])) for i in range(adj.shape[0])]


def digital_mpnn(adj: np.ndarray, spec: MPNNSpec, states: np.ndarray) -> np.ndarray:
    """Reference update; a node with no in-neighbours aggregates to zeros."""
    out = []
    for i, nbrs in enumerate(_in_edges(adj)):
        if nbrs:
            agg = spec.aggregate(np.stack([spec.message(states[i], states[j]) for j in nbrs]))
        else:
            agg = np.zeros(spec.d_msg)
        out.append(spec.update(states[i], agg))
    return np.stack(out)


@dataclass
class FrequencyAssignment:
    nu: dict  # (tx, rx) -> subcarrier
    num_subcarriers: int

    def is_injective(self) -> bool:
        seen: dict[int, set] = {}
        for (j, i), k in self.nu.items():
            if k in seen.setdefault(i, set()):
                return False
            seen[i].add(k)
        return True

    def fold(self, K: int) -> "FrequencyAssignment":
        """Reuse subcarriers modulo ``K`` (collides when ``K`` is below the colour count)."""
        if K < 1:
            raise ValueError("K must be >= 1")
        return FrequencyAssignment({e: k % K for e, k in self.nu.items()}, min(K, self.num_subcarriers))


def assign_frequencies(adj: np.ndarray) -> FrequencyAssignment:
    """Subcarrier of edge (j -> i) is the colour of transmitter j in a minimum colouring."""
    adj = np.asarray(adj, bool)
    if adj.ndim == 3:
        adj = adj.any(axis=0)
    cg = build_conflict_graph(adj)
    col = exact_coloring(cg)
    nu = {(int(j), int(i)): int(col.color_of[int(j)]) for j, i in zip(*np.nonzero(adj))}
    used = len(set(nu.values()))
    # compact the colour ids actually used so they run 0..K'-1
    remap = {c: r for r, c in enumerate(sorted(set(nu.values())))}
    return FrequencyAssignment({e: remap[k] for e, k in nu.items()}, used)


def channel_inversion_power(h_mag, P_rx: float, h_floor: float = H_FLOOR, p_max: float | None = None):
    """Amplitude multiplier ``P_rx / |h|`` and a feasibility mask.

    A link is infeasible when its gain is at or below ``h_floor`` or when the
    required multiplier exceeds ``p_max``; infeasible entries get 0.
    """
    h = np.asarray(h_mag, float)
    if P_rx <= 0:
        raise ValueError("P_rx must be positive")
    ok = h > h_floor
    p = np.where(ok, P_rx / np.where(ok, h, 1.0), 0.0)
    if p_max is not None:
        ok &= p <= p_max * (1 + 1e-12)
        p = np.where(ok, p, 0.0)
    if p.ndim == 0:
        return float(p), bool(ok)
    return p, ok


@dataclass
class AnalogResult:
    outputs: np.ndarray  # (trials, N, d)
    msg_true: np.ndarray  # (E, d_msg)
    msg_hat: np.ndarray  # (trials, E, d_msg)
    edges: list
    infeasible: int


def analog_mpnn(
    adj: np.ndarray,
    spec: MPNNSpec,
    states: np.ndarray,
    assignment: FrequencyAssignment,
    hmag: np.ndarray | None = None,
    P_rx: float = 1.0,
    sigma2: float = 0.0,
    rng: np.random.Generator | None = None,
    trials: int = 1,
    p_max: float | None = None,
) -> AnalogResult:
    """One message-passing round through noisy orthogonal analog links.

    Receiver ``i`` sees on subcarrier ``k`` the superposition of every
    in-neighbour assigned to ``k``, each with amplitude ``h * p * m`` and
    ``p = P_rx / h``, plus real Gaussian noise. It decodes one message per
    occupied subcarrier by dividing by ``P_rx`` and aggregates those.
    Infeasible links are dropped and counted.
    """
    adj = np.asarray(adj, bool)
    n = adj.shape[0]
    if hmag is None:
        hmag = np.ones((n, n))
    if sigma2 > 0 and rng is None:
        raise ValueError("noisy emulation needs an rng")
    edges = [(int(j), int(i)) for j, i in zip(*np.nonzero(adj))]
    for e in edges:
        if e not in assignment.nu:
            raise AssignmentError(f"edge {e[0]}->{e[1]} has no subcarrier")
    amp, ok = channel_inversion_power(np.array([hmag[j, i] for j, i in edges]), P_rx, p_max=p_max)
    amp, ok = np.atleast_1d(amp), np.atleast_1d(ok)
    live = [e for e, f in zip(edges, ok) if f]
    gains = np.array([hmag[j, i] for j, i in live]) * amp[ok]  # = P_rx per live link
    msgs = np.stack([spec.message(states[i], states[j]) for j, i in live]) if live else np.zeros((0, spec.d_msg))

    slot_of, slots = {}, []
    for e in live:
        key = (e[1], assignment.nu[e])
        if key not in slot_of:
            slot_of[key] = len(slots)
            slots.append(key)
    rx = np.zeros((len(slots), spec.d_msg))
    for idx, e in enumerate(live):
        rx[slot_of[(e[1], assignment.nu[e])]] += gains[idx] * msgs[idx]
    rx = np.broadcast_to(rx, (trials,) + rx.shape).copy()
    if sigma2 > 0:
        rx += rng.normal(0.0, np.sqrt(sigma2), rx.shape)
    dec = rx / P_rx  # (trials, S, d_msg)

    outputs = np.empty((trials, n, spec.d))
    for i in range(n):
        mine = [s for s, (r, _) in enumerate(slots) if r == i]
        if mine:
            agg = spec.aggregate(dec[:, mine], axis=1)
        else:
            agg = np.zeros((trials, spec.d_msg))
        outputs[:, i] = spec.update(np.broadcast_to(states[i], (trials, spec.d)), agg)
    msg_hat = dec[:, [slot_of[(e[1], assignment.nu[e])] for e in live]] if live else np.zeros((trials, 0, spec.d_msg))
    return AnalogResult(outputs, msgs, msg_hat, live, len(edges) - len(live))


@dataclass
class EmulationReport:
    sigma2: list = field(default_factory=list)
    msg_mse: list = field(default_factory=list)
    update_mse: list = field(default_factory=list)
    infeasible_count: list = field(default_factory=list)
    P_rx: float = 1.0

    def predicted_msg_mse(self) -> np.ndarray:
        return np.asarray(self.sigma2) / self.P_rx**2

    def rows(self) -> list[dict]:
        return [
            {"sigma2": s, "msg_mse": m, "update_mse": u, "infeasible_count": c}
            for s, m, u, c in zip(self.sigma2, self.msg_mse, self.update_mse, self.infeasible_count)
        ]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["sigma2", "msg_mse", "update_mse", "infeasible_count"])
            w.writeheader()
            for r in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return path


def emulate_mpnn(
    adj: np.ndarray,
    spec: MPNNSpec,
    states: np.ndarray,
    sigma2_list,
    P_rx: float | None = None,
    hmag: np.ndarray | None = None,
    assignment: FrequencyAssignment | None = None,
    rng: np.random.Generator | None = None,
    trials: int = 1000,
    P_tot: float = 1.0,
) -> EmulationReport:
    """Message and update MSE of the analog emulation against the digital network.

    Without ``P_rx`` the target is the largest value every link can reach
    under the amplitude budget ``P_tot``, i.e. ``P_tot * min |h|`` over edges.
    """
    adj = np.asarray(adj, bool)
    n = adj.shape[0]
    if hmag is None:
        hmag = np.ones((n, n))
    if assignment is None:
        assignment = assign_frequencies(adj)
    if P_rx is None:
        h_edges = hmag[adj & (hmag > H_FLOOR)]
        P_rx = float(P_tot * h_edges.min()) if h_edges.size else float(P_tot)
    rng = rng if rng is not None else np.random.default_rng(0)
    ref = digital_mpnn(adj, spec, states)
    rep = EmulationReport(P_rx=P_rx)
    for s2 in sigma2_list:
        res = analog_mpnn(adj, spec, states, assignment, hmag, P_rx, float(s2), rng, trials, p_max=P_tot)
        rep.sigma2.append(float(s2))
        err = res.msg_hat - res.msg_true[None]
        rep.msg_mse.append(float(np.mean(err**2)) if err.size else 0.0)
        rep.update_mse.append(float(np.mean((res.outputs - ref[None]) ** 2)))
        rep.infeasible_count.append(res.infeasible)
    return rep

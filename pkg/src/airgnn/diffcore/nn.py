"""Parameters, layers, losses and the Adam optimizer built on the tape."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "ParameterStore",
    "NonFiniteGradientError",
    "linear",
    "mlp",
    "lstm_cell",
    "lstm_unroll",
    "bce_loss",
    "softmax_power_head",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

BCE_EPS = 1e-7


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class _Slot:
    value: Tensor
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class ParameterStore:
    """Named trainable arrays with their gradients and Adam moments."""

    slots: dict[str, _Slot] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.slots:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.slots[name] = _Slot(t, np.zeros_like(t.data), np.zeros_like(t.data))
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.slots[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.slots

    def __iter__(self):
        return iter(self.slots)

    def __len__(self):
        return len(self.slots)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.slots if n.startswith(prefix)]

    def values(self) -> dict[str, np.ndarray]:
        return {n: s.value.data for n, s in self.slots.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {
            n: (s.value.grad if s.value.grad is not None else np.zeros_like(s.value.data))
            for n, s in self.slots.items()
        }

    def zero_grad(self) -> None:
        for s in self.slots.values():
            s.value.grad = None

    def num_parameters(self) -> int:
        return int(sum(s.value.data.size for s in self.slots.values()))

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for n, s in self.slots.items():
            out.add(n, s.value.data.copy())
            out.slots[n].m[...] = s.m
            out.slots[n].v[...] = s.v
            out.slots[n].step = s.step
        return out

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for n, arr in values.items():
            if self.slots[n].value.shape != np.shape(arr):
                raise ValueError(f"shape mismatch for {n}: {self.slots[n].value.shape} vs {np.shape(arr)}")
            self.slots[n].value.data = np.array(arr, dtype=np.float64)

    def reset_moments(self) -> None:
        for s in self.slots.values():
            s.m[...] = 0
            s.v[...] = 0
            s.step = 0


def _glorot(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, shape)


def init_linear(store: ParameterStore, prefix: str, n_in: int, n_out: int, rng, per_node: int | None = None):
    lead = () if per_node is None else (per_node,)
    store.add(f"{prefix}.W", _glorot(rng, lead + (n_in, n_out)))
    store.add(f"{prefix}.b", np.zeros(lead + (n_out,)))


def linear(x, store: ParameterStore, prefix: str) -> Tensor:
    """x @ W + b; a 3-D ``W`` of shape (N, in, out) applies per node to x[..., N, in]."""
    return _affine(x, store[f"{prefix}.W"], store[f"{prefix}.b"])


def init_mlp(store, prefix, sizes: list[int], rng, per_node=None):
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(store, f"{prefix}.{i}", a, b, rng, per_node)


def mlp(x, store: ParameterStore, prefix: str, activation=T.tanh) -> Tensor:
    """Stack of linear layers with ``activation`` between (none after the last)."""
    n = 0
    while f"{prefix}.{n}.W" in store:
        n += 1
    for i in range(n):
        x = linear(x, store, f"{prefix}.{i}")
        if i < n - 1:
            x = activation(x)
    return x


def init_lstm(store, prefix, n_in: int, hidden: int, rng, per_node=None):
    lead = () if per_node is None else (per_node,)
    store.add(f"{prefix}.Wx", _glorot(rng, lead + (n_in, 4 * hidden)))
    store.add(f"{prefix}.Wh", _glorot(rng, lead + (hidden, 4 * hidden)))
    b = np.zeros(lead + (4 * hidden,))
    b[..., hidden : 2 * hidden] = 1.0  # forget-gate bias
    store.add(f"{prefix}.b", b)


def _affine(x, W, b=None):
    x = T.as_tensor(x)
    if W.ndim == 2:
        y = T.matmul(x, W)
    else:
        # per-node weights (N, in, out) on x (..., N, in): node-major batched GEMM
        lead, n, f = x.shape[:-2], x.shape[-2], x.shape[-1]
        xn = T.transpose(T.reshape(x, (-1, n, f)), (1, 0, 2))
        yn = T.matmul(xn, W)
        y = T.reshape(T.transpose(yn, (1, 0, 2)), lead + (n, W.shape[-1]))
    return y if b is None else T.add(y, b)


def lstm_cell(x, h_prev, c_prev, store: ParameterStore, prefix: str):
    """One LSTM step; gate order (input, forget, cell, output)."""
    Wx, Wh, b = store[f"{prefix}.Wx"], store[f"{prefix}.Wh"], store[f"{prefix}.b"]
    H = Wh.shape[-2]
    z = T.add(_affine(x, Wx, b), _affine(h_prev, Wh))
    i = T.sigmoid(z[..., 0:H])
    f = T.sigmoid(z[..., H : 2 * H])
    g = T.tanh(z[..., 2 * H : 3 * H])
    o = T.sigmoid(z[..., 3 * H : 4 * H])
    c = T.add(T.mul(f, c_prev), T.mul(i, g))
    h = T.mul(o, T.tanh(c))
    return h, c


def lstm_unroll(sequence: list, store: ParameterStore, prefix: str, layers: int = 1) -> list[Tensor]:
    """Run a (stacked) LSTM from zero state; returns top-layer hidden states."""
    inputs = list(sequence)
    for layer in range(layers):
        name = f"{prefix}.{layer}"
        H = store[f"{name}.Wh"].shape[-2]
        lead = T.as_tensor(inputs[0]).shape[:-1]
        h = Tensor(np.zeros(lead + (H,)))
        c = Tensor(np.zeros(lead + (H,)))
        outs = []
        for x in inputs:
            h, c = lstm_cell(x, h, c, store, name)
            outs.append(h)
        inputs = outs
    return inputs


def bce_loss(pred, target, weight: np.ndarray | None = None) -> Tensor:
    """Mean binary cross-entropy; ``pred`` clamped to [eps, 1 - eps].

    ``weight`` (0/1 or real) selects which entries count toward the mean.
    """
    pred = T.as_tensor(pred)
    y = np.asarray(target, dtype=np.float64)
    if pred.data.size == 0:
        raise ValueError("bce_loss of an empty batch")
    if y.shape != pred.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {y.shape}")
    w = np.ones_like(y) if weight is None else np.broadcast_to(np.asarray(weight, float), y.shape)
    denom = w.sum()
    if denom <= 0:
        raise ValueError("bce_loss with zero total weight")
    p = np.clip(pred.data, BCE_EPS, 1 - BCE_EPS)
    loss = -(w * (y * np.log(p) + (1 - y) * np.log(1 - p))).sum() / denom
    inside = (pred.data > BCE_EPS) & (pred.data < 1 - BCE_EPS)

    def bce_backward(g):
        return (g * w * inside * (p - y) / (p * (1 - p)) / denom,)

    return T._make(np.asarray(loss), (pred,), bce_backward)


def softmax_power_head(logits, p_tot: float) -> Tensor:
    """Non-negative power vector summing to ``p_tot`` over the last axis."""
    if p_tot <= 0:
        raise ValueError("p_tot must be positive")
    return T.scale(T.softmax(logits), p_tot)


def adam_step(
    store: ParameterStore,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    frozen: Iterable[str] = (),
) -> None:
    """Bias-corrected Adam update on every non-frozen parameter; grads are zeroed."""
    frozen = tuple(frozen)
    for name, s in store.slots.items():
        g = s.value.grad
        if g is None or (frozen and name.startswith(frozen)):
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        s.step += 1
        s.m = beta1 * s.m + (1 - beta1) * g
        s.v = beta2 * s.v + (1 - beta2) * g * g
        m_hat = s.m / (1 - beta1**s.step)
        v_hat = s.v / (1 - beta2**s.step)
        s.value.data = s.value.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    store.zero_grad()


def save_checkpoint(path, store: ParameterStore, meta: dict | None = None) -> Path:
    """Named float64 arrays plus a JSON metadata record, in one ``.npz``."""
    path = Path(path)
    arrays = {f"param/{n}": v.astype("<f8") for n, v in store.values().items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta or {}, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    store = ParameterStore()
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode()) if "__meta__" in data else {}
        for key in data.files:
            if key.startswith("param/"):
                store.add(key[len("param/") :], data[key])
    return store, meta

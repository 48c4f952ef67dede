"""Tape-based reverse-mode differentiation over dense numpy arrays.

Ops executed inside an active :class:`Tape` are appended in execution order,
which is already a topological order, so ``backward`` is a single reverse
sweep. Outside a tape ops run forward-only.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "set_debug",
    "no_tape",
    "add",
    "sub",
    "mul",
    "matmul",
    "scale",
    "concat",
    "stack",
    "getitem",
    "reshape",
    "transpose",
    "sigmoid",
    "tanh",
    "relu",
    "leaky_relu",
    "softmax",
    "l2_normalize",
    "sqrt",
    "sum",
    "mean",
    "add_noise",
]

_DEBUG = False
_TAPES: list["Tape"] = []


def set_debug(flag: bool) -> None:
    """Check every op output for non-finite values."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "is_leaf")

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.is_leaf = True

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    dtype = property(lambda self: self.data.dtype)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Tape:
    """Ordered record of primitive ops with their local-gradient closures."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor, grad: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every grad-requiring leaf."""
        if grad is None:
            if loss.data.size != 1:
                raise ValueError("backward from a non-scalar needs an explicit seed gradient")
            grad = np.ones_like(loss.data)
        pending: dict[int, np.ndarray] = {id(loss): grad}
        for out, inputs, fn in reversed(self.records):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    pending[key] = gi if key not in pending else pending[key] + gi
        self.records.clear()


@contextmanager
def no_tape():
    """Temporarily suspend recording (e.g. for evaluation passes)."""
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from {backward.__qualname__.split('.')[0]}")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    out.is_leaf = False
    if needs and _TAPES:
        _TAPES[-1].records.append((out, tuple(inputs), backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def add_backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), add_backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def sub_backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), sub_backward)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def mul_backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), mul_backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)

    def scale_backward(g):
        return (g * c,)

    return _make(a.data * c, (a,), scale_backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product following ``np.matmul`` broadcasting (ndim >= 2)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if b.ndim == 2 and a.ndim > 2:
        # stacked @ shared matrix: one flat GEMM instead of many small ones
        a2 = a.data.reshape(-1, a.shape[-1])

        def matmul_flat_backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
        return _make(out, (a, b), matmul_flat_backward)

    def matmul_backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), matmul_backward)


def add_noise(a, noise: np.ndarray) -> Tensor:
    """``a + noise`` with the noise held constant: the backward pass is identity."""
    a = as_tensor(a)

    def noise_backward(g):
        return (_unbroadcast(g, a.shape),)

    return _make(a.data + noise, (a,), noise_backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def sqrt_backward(g):
        with np.errstate(divide="ignore"):
            return (np.where(out > 0, g * 0.5 / np.where(out > 0, out, 1.0), 0.0),)

    return _make(out, (a,), sqrt_backward)


# ---------------------------------------------------------------------------
# structural


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def concat_backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, concat_backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def stack_backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([t.data for t in ts], axis=axis), ts, stack_backward)


def getitem(a, idx) -> Tensor:
    """Basic slicing and integer-array indexing; repeated indices accumulate."""
    a = as_tensor(a)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def getitem_backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), getitem_backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def reshape_backward(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), reshape_backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)

    def transpose_backward(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(a.data, axes), (a,), transpose_backward)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def sigmoid_backward(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), sigmoid_backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def tanh_backward(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), tanh_backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0

    def relu_backward(g):
        return (g * pos,)

    return _make(a.data * pos, (a,), relu_backward)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)

    def leaky_relu_backward(g):
        return (g * factor,)

    return _make(a.data * factor, (a,), leaky_relu_backward)


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def softmax_backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), softmax_backward)


def l2_normalize(a, eps: float = 1e-12) -> Tensor:
    """Divide each last-axis vector by (its L2 norm + eps)."""
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    denom = norm + eps
    out = a.data / denom

    def l2_normalize_backward(g):
        # d/dx [x / (|x| + eps)] = g/denom - x (x.g) / (|x| denom^2)
        dot = (a.data * g).sum(axis=-1, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        return (g / denom - a.data * dot / (safe * denom * denom),)

    return _make(out, (a,), l2_normalize_backward)


# ---------------------------------------------------------------------------
# reductions


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)

    def sum_backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), sum_backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis, keepdims), 1.0 / float(count))

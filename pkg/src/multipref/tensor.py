"""Dense float tensors with taped reverse-mode automatic differentiation.

Values live in numpy arrays (float32 by default, float64 for testing).
Every differentiable operation appends its output to a global tape;
``backward`` walks the tape in reverse execution order and accumulates
gradients into the leaf tensors that requested them.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float32

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ContractError(ValueError):
    """An operation was called with inputs that violate its contract."""


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

_tape: list["Tensor"] = []
_grad_enabled: bool = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def tape_size() -> int:
    return len(_tape)


def clear_tape() -> None:
    for node in _tape:
        node._backward = None
        node._parents = ()
        node.grad = None
    _tape.clear()


class Tensor:
    """A dense float array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._backward: Callable | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Parameter:
    """A named leaf tensor that collects gradients across backward passes."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = Tensor(value, requires_grad=True)
        self.value.grad = np.zeros_like(self.value.data)

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @data.setter
    def data(self, arr: np.ndarray) -> None:
        if arr.shape != self.value.data.shape:
            raise ContractError(
                f"parameter {self.name}: assigned shape {arr.shape} != {self.value.data.shape}"
            )
        self.value.data = arr

    @property
    def grad(self) -> np.ndarray:
        if self.value.grad is None:
            self.value.grad = np.zeros_like(self.value.data)
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.grad = np.zeros_like(self.value.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.data.shape})"


def _record(out: Tensor, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Put ``out`` on the tape when gradients are live for any parent."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        _tape.append(out)
    return out


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(x) into every participating leaf; clears the tape.

    Gradients accumulate additively, so parameters must be zeroed between
    optimization steps.
    """
    if loss.data.ndim != 0:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ContractError("backward requires a loss produced through taped operations")
    try:
        loss.grad = np.ones_like(loss.data)
        for node in reversed(_tape):
            if node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                # never accumulate in place: closures may hand the same
                # array to several parents
                parent.grad = g if parent.grad is None else parent.grad + g
            node.grad = None
    finally:
        clear_tape()


# --------------------------------------------------------------------------
# Shape helpers
# --------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _as_constant(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ContractError(f"{op}: mixed dtypes {sorted(d.name for d in dtypes)}")


# --------------------------------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _as_constant(b, a)
    _check_same_dtype("add", a, b)
    out = Tensor(a.data + b.data)

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), back)


def sub(a: Tensor, b) -> Tensor:
    b = _as_constant(b, a)
    _check_same_dtype("sub", a, b)
    out = Tensor(a.data - b.data)

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), back)


def mul(a: Tensor, b) -> Tensor:
    b = _as_constant(b, a)
    _check_same_dtype("mul", a, b)
    out = Tensor(a.data * b.data)

    def back(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _record(out, (a, b), back)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; on ties the gradient routes to the first argument."""
    _check_same_dtype("minimum", a, b)
    out = Tensor(np.minimum(a.data, b.data))
    take_a = a.data <= b.data

    def back(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), a.data.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.data.shape),
        )

    return _record(out, (a, b), back)


def squared_error(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (a - b)^2."""
    _check_same_dtype("squared_error", a, b)
    diff = a.data - b.data
    out = Tensor(diff * diff)

    def back(g):
        scaled = 2.0 * diff * g
        return _unbroadcast(scaled, a.data.shape), _unbroadcast(-scaled, b.data.shape)

    return _record(out, (a, b), back)


# --------------------------------------------------------------------------
# Linear algebra and shape ops
# --------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul requires rank >= 2, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ContractError(f"matmul: inner dimensions differ, {a.data.shape} @ {b.data.shape}")
    _check_same_dtype("matmul", a, b)
    out = Tensor(a.data @ b.data)

    def back(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return ga, gb

    return _record(out, (a, b), back)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    out = Tensor(np.transpose(a.data, axes))
    inv = None if axes is None else tuple(np.argsort(axes))

    def back(g):
        return (np.transpose(g, inv),)

    return _record(out, (a,), back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    orig = a.data.shape

    def back(g):
        return (g.reshape(orig),)

    return _record(out, (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    _check_same_dtype("concat", *tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i]:offsets[i + 1]], 0, axis) for i in range(len(sizes))
        )

    return _record(out, tuple(tensors), back)


def getitem(a: Tensor, idx) -> Tensor:
    out = Tensor(np.array(a.data[idx]))
    shape = a.data.shape

    def back(g):
        ga = np.zeros(shape, dtype=g.dtype)
        np.add.at(ga, idx, g)
        return (ga,)

    return _record(out, (a,), back)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of ``table`` by integer id."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError(f"embedding: ids must be integers, got {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ContractError(
            f"embedding: id out of range [0, {table.data.shape[0]}), got "
            f"[{ids.min()}, {ids.max()}]"
        )
    out = Tensor(table.data[ids])
    shape = table.data.shape

    def back(g):
        gt = np.zeros(shape, dtype=g.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (gt,)

    return _record(out, (table,), back)


# --------------------------------------------------------------------------
# Reductions
# --------------------------------------------------------------------------

def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, a.ndim)
    out = Tensor(a.data.sum(axis=axes, keepdims=keepdims))
    shape = a.data.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(out, (a,), back)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axis(axis, a.ndim)
    count = int(np.prod([a.data.shape[i] for i in axes])) if axes else 1
    out = Tensor(a.data.mean(axis=axes, keepdims=keepdims))
    shape = a.data.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).astype(g.dtype, copy=True),)

    return _record(out, (a,), back)


def exclusive_cumsum(a: Tensor, axis: int = -1) -> Tensor:
    """out[..., i] = sum of entries strictly before i along ``axis``."""
    x = np.moveaxis(a.data, axis, -1)
    inc = np.cumsum(x, axis=-1)
    res = np.empty_like(x)
    res[..., 0] = 0.0
    res[..., 1:] = inc[..., :-1]
    out = Tensor(np.moveaxis(res, -1, axis))

    def back(g):
        gm = np.moveaxis(g, axis, -1)
        suffix = np.cumsum(gm[..., ::-1], axis=-1)[..., ::-1]
        ga = np.empty_like(gm)
        ga[..., -1] = 0.0
        ga[..., :-1] = suffix[..., 1:]
        return (np.moveaxis(ga, -1, axis),)

    return _record(out, (a,), back)


# --------------------------------------------------------------------------
# Nonlinearities
# --------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    pos = a.data > 0

    def back(g):
        return (np.where(pos, g, 0.0),)

    return _record(out, (a,), back)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = Tensor(x * cdf)

    def back(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return _record(out, (a,), back)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; the identity outside training mode."""
    if not train or rate == 0.0:
        return a
    if not (0.0 <= rate < 1.0):
        raise ContractError(f"dropout: rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ContractError("dropout: training mode requires a random generator")
    keep = (rng.random(a.data.shape) >= rate).astype(a.dtype)
    scale = a.dtype.type(1.0 / (1.0 - rate))
    out = Tensor(a.data * keep * scale)

    def back(g):
        return (g * keep * scale,)

    return _record(out, (a,), back)


# --------------------------------------------------------------------------
# Softmax family and normalization
# --------------------------------------------------------------------------

def _mask_bool(mask, shape) -> np.ndarray:
    m = np.asarray(mask)
    mb = m != 0
    try:
        np.broadcast_shapes(mb.shape, shape)
    except ValueError:
        raise ContractError(f"mask shape {mb.shape} does not broadcast to {shape}") from None
    return mb


def masked_softmax(logits: Tensor, mask, axis: int = -1) -> Tensor:
    """Softmax over positions where mask != 0; masked entries are exactly 0."""
    mb = _mask_bool(mask, logits.data.shape)
    x = logits.data
    neg = np.where(mb, x, -np.inf)
    m = neg.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(np.where(mb, x - m, -np.inf))
    # exp(-inf) == 0, so masked entries are exactly zero
    s = e.sum(axis=axis, keepdims=True)
    s = np.where(s == 0.0, 1.0, s)
    p = (e / s).astype(x.dtype, copy=False)
    out = Tensor(p)

    def back(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - inner),)

    return _record(out, (logits,), back)


def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    x = logits.data
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    out = Tensor(out_data)

    def back(g):
        return (g - np.exp(out_data) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (logits,), back)


def masked_nll(logits: Tensor, mask, labels: np.ndarray) -> Tensor:
    """Per-row -log softmax(logits)[label], normalizing only over mask != 0.

    ``logits`` is (batch, n); ``labels`` holds one unmasked column per row.
    """
    if logits.ndim != 2:
        raise ContractError(f"masked_nll expects (batch, n) logits, got {logits.data.shape}")
    mb = np.broadcast_to(_mask_bool(mask, logits.data.shape), logits.data.shape)
    labels = np.asarray(labels)
    if labels.shape != (logits.data.shape[0],):
        raise ContractError(
            f"masked_nll: labels shape {labels.shape} != ({logits.data.shape[0]},)"
        )
    rows = np.arange(logits.data.shape[0])
    if not mb[rows, labels].all():
        bad = rows[~mb[rows, labels]]
        raise ContractError(f"masked_nll: label is masked for rows {bad.tolist()[:5]}")
    x = logits.data
    neg = np.where(mb, x, -np.inf)
    m = neg.max(axis=1, keepdims=True)
    e = np.exp(np.where(mb, x - m, -np.inf))
    s = e.sum(axis=1, keepdims=True)
    logz = (np.log(s) + m).squeeze(1)
    out = Tensor(logz - x[rows, labels])
    p = e / s

    def back(g):
        gx = p * g[:, None]
        gx[rows, labels] -= g
        return (gx.astype(x.dtype, copy=False),)

    return _record(out, (logits,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if gamma.data.shape != x.data.shape[-1:] or beta.data.shape != x.data.shape[-1:]:
        raise ContractError(
            f"layer_norm: affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature dim {x.data.shape[-1:]}"
        )
    _check_same_dtype("layer_norm", x, gamma, beta)
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def back(g):
        lead = tuple(range(d.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx.astype(d.dtype, copy=False), dgamma, dbeta

    return _record(out, (x, gamma, beta), back)

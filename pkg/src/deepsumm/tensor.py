"""Dense tensors with a reverse-mode gradient tape.

Every array lives in a ``numpy.ndarray``; each differentiable operation
records its inputs and a closure that maps the output gradient to input
gradients. ``backward`` walks the recorded graph once in reverse
topological order and accumulates into ``Tensor.grad``.

Reductions that feed normalization (softmax, layer norm, cross-entropy,
``sum``) accumulate in float64 regardless of the storage dtype.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, NonFiniteError, ShapeError

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "no_grad",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "concat",
    "stack",
    "embedding",
    "tanh",
    "sigmoid",
    "relu",
    "dropout",
    "masked_fill",
    "softmax",
    "layer_norm",
    "cross_entropy",
    "neg_fill_value",
]

_state = threading.local()

# Checking finiteness on every forward op is cheap relative to the matmuls
# and catches divergence at the op that caused it.
CHECK_FINITE = True


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording on the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def neg_fill_value(dtype) -> float:
    """Most negative finite value of ``dtype``; stands in for -inf in masks."""
    return float(np.finfo(dtype).min)


class Tensor:
    """An n-dimensional real array that can participate in autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.name = name

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # -- operators ----------------------------------------------------------

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

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


# -- tape ------------------------------------------------------------------


@dataclass
class GradTape:
    """Recorded forward operations reachable from a loss, in topological order."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "GradTape":
        order: list = []
        seen: set = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def run(self, loss: Tensor) -> None:
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate into .grad
                if node.grad is None:
                    node.grad = np.array(g, dtype=node.data.dtype, copy=True)
                else:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every leaf ``t`` that requires grad."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    GradTape.from_loss(loss).run(loss)


# -- helpers -------------------------------------------------------------------


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _result(data: np.ndarray, parents: Iterable[Tensor], backward_fn, op: str) -> Tensor:
    if type(data) is not np.ndarray:
        data = np.asarray(data)
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_op(compute, a: Tensor, b: Tensor, op: str) -> np.ndarray:
    try:
        return compute()
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(_broadcast_op(lambda: a.data + b.data, a, b, "add"), (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(_broadcast_op(lambda: a.data - b.data, a, b, "sub"), (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(_broadcast_op(lambda: a.data * b.data, a, b, "mul"), (a, b), bw, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _result(x.data * x.data.dtype.type(factor), (x,), lambda g: (g * factor,), "scale")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return _result(np.where(active, x.data, 0).astype(x.dtype), (x,), lambda g: (g * active,), "relu")


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout. ``p == 0`` (evaluation) returns ``x`` untouched."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout with p > 0 needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def masked_fill(x: Tensor, mask, value: Optional[float] = None) -> Tensor:
    """Replace entries where ``mask`` is true; gradient is zero there."""
    mask = np.asarray(mask, dtype=bool)
    try:
        np.broadcast_shapes(mask.shape, x.shape)
    except ValueError:
        raise ShapeError(f"masked_fill: mask {mask.shape} does not broadcast to {x.shape}") from None
    fill = neg_fill_value(x.dtype) if value is None else value
    keep = ~mask

    def bw(g):
        return (_unbroadcast(g * keep, x.shape),)

    return _result(np.where(mask, x.dtype.type(fill), x.data), (x,), bw, "masked_fill")


# -- shape ops -------------------------------------------------------------------


def reshape(x: Tensor, shape: tuple) -> Tensor:
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None
    return _result(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Optional[tuple] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (g.transpose(inverse),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def take(x: Tensor, index) -> Tensor:
    """``x[index]`` with a scatter-add gradient."""
    y = np.ascontiguousarray(x.data[index])
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(y, (x,), bw, "index")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(y, tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        y = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"stack: shapes differ {shapes}") from None

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(y, tensors, bw, "stack")


# -- reductions / linear algebra -------------------------------------------------


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _result(np.asarray(y), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum_(x, axis, keepdims), 1.0 / count)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading dimensions broadcast."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw, "matmul")


# -- neural-net primitives ---------------------------------------------------------


def embedding(weight: Tensor, ids) -> Tensor:
    """Gather rows of ``weight``; gradient scatter-adds back into those rows."""
    ids = np.asarray(ids, dtype=np.int64)
    if weight.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {weight.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ContractError(f"embedding ids out of range [0, {weight.shape[0]})")

    def bw(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return _result(weight.data[ids], (weight,), bw, "embedding")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data.astype(np.float64)
    z = np.exp(z - z.max(axis=axis, keepdims=True))
    y64 = z / z.sum(axis=axis, keepdims=True)
    y = y64.astype(x.dtype)

    def bw(g):
        inner = (g * y64).sum(axis=axis, keepdims=True)
        return ((y64 * (g - inner)).astype(x.dtype),)

    return _result(y, (x,), bw, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to zero mean / unit variance, then apply gain and bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} must be ({d},)")
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    centered = x64 - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = (xhat * gain.data + bias.data).astype(x.dtype)
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        g64 = g.astype(np.float64)
        dxhat = g64 * gain.data
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        dgain = (g64 * xhat).sum(axis=lead)
        dbias = g64.sum(axis=lead)
        return dx.astype(x.dtype), dgain.astype(gain.dtype), dbias.astype(bias.dtype)

    return _result(y, (x, gain, bias), bw, "layer_norm")


def cross_entropy(logits: Tensor, targets, ignore_index: Optional[int] = 0,
                  reduction: str = "mean") -> Tensor:
    """Cross-entropy from unnormalized logits over the last axis.

    Positions whose target equals ``ignore_index`` contribute neither loss nor
    gradient. ``reduction`` is ``"mean"`` (over counted positions) or ``"sum"``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if reduction not in ("mean", "sum"):
        raise ContractError(f"unknown reduction {reduction!r}")
    n_classes = logits.shape[-1]
    flat = logits.data.reshape(-1, n_classes).astype(np.float64)
    tflat = targets.reshape(-1)
    valid = np.ones_like(tflat, dtype=bool) if ignore_index is None else tflat != ignore_index
    count = int(valid.sum())
    if reduction == "mean" and count == 0:
        raise ContractError("cross_entropy: every target position is ignored")
    safe_t = np.where(valid, tflat, 0)
    if safe_t.size and (safe_t.min() < 0 or safe_t.max() >= n_classes):
        raise ContractError(f"cross_entropy: target ids out of range [0, {n_classes})")
    shifted = flat - flat.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(tflat))
    nll = (logsumexp - shifted[rows, safe_t]) * valid
    denom = count if reduction == "mean" else 1
    loss = nll.sum() / denom

    def bw(g):
        probs = np.exp(shifted - logsumexp[:, None])
        probs[rows, safe_t] -= 1.0
        probs *= (valid / denom)[:, None] * float(g)
        return (probs.reshape(logits.shape).astype(logits.dtype),)

    # the scalar stays in float64 so summed evaluation losses keep full precision
    return _result(np.asarray(loss, dtype=np.float64), (logits,), bw, "cross_entropy")

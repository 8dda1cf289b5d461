"""Minimal reverse-mode autodiff over dense numpy arrays.

Every operation returns a new :class:`Tensor`. When at least one input
requires a gradient, the output remembers its parents and a closure that
maps the output gradient onto the parents' gradients. :func:`backward`
walks that record in reverse topological order.

Shapes are limited to rank <= 4 and broadcasting is limited to adding a
bias over the last axis; any other mismatch raises ``DimensionError``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, GraphError

DEFAULT_DTYPE = np.float64
MAX_RANK = 4
_GELU_C = math.sqrt(2.0 / math.pi)
_RECORDING = [True]


class Tensor:
    """Dense array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds the supported maximum of {MAX_RANK}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._consumed = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar for tests and small expressions
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class no_grad:
    """Context manager that suspends gradient recording (inference only)."""

    def __enter__(self):
        self._prev = _RECORDING[0]
        _RECORDING[0] = False

    def __exit__(self, *exc):
        _RECORDING[0] = self._prev


def _result(data, parents, backward):
    out = Tensor(data)
    if _RECORDING[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------- elementwise


def add(a, b):
    """Elementwise sum. ``b`` may also be a bias over ``a``'s last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
        def bw(g):
            return g, g.reshape(-1, g.shape[-1]).sum(axis=0)

        return _result(a.data + b.data, (a, b), bw)
    raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x, c):
    x = as_tensor(x)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def gelu(x):
    """GELU, tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))."""
    x = as_tensor(x)
    xd = x.data
    t = np.tanh(_GELU_C * (xd + 0.044715 * xd**3))
    y = 0.5 * xd * (1.0 + t)

    def bw(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * dt),)

    return _result(y, (x,), bw)


def masked_fill(x, mask, value=-np.inf):
    """Replace entries where ``mask`` is True by a constant.

    ``mask`` is a boolean array whose shape matches the trailing axes of
    ``x``; it is constant and carries no gradient.
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[x.ndim - mask.ndim:]:
        raise DimensionError(f"mask shape {mask.shape} does not match trailing axes of {x.shape}")
    y = np.where(mask, value, x.data)
    return _result(y, (x,), lambda g: (np.where(mask, 0.0, g),))


# ---------------------------------------------------------------- reductions


def sum(x):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, g, dtype=x.data.dtype),))


def mean(x):
    x = as_tensor(x)
    n = x.size
    shape = x.shape
    return _result(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, g / n, dtype=x.data.dtype),))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product over the last two axes; leading axes must agree exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _result(ad @ bd, (a, b), bw)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} into {tuple(shape)}") from exc
    if y.ndim > MAX_RANK:
        raise DimensionError(f"rank {y.ndim} exceeds the supported maximum of {MAX_RANK}")
    return _result(y, (x,), lambda g: (g.reshape(old),))


def permute(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for rank {x.ndim}")
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def transpose(x):
    """Swap the last two axes."""
    axes = list(range(as_tensor(x).ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis):
            raise DimensionError(f"cannot concatenate {ref.shape} with {t.shape} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        index = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            parts.append(g[tuple(index)])
        return tuple(parts)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def take(x, axis, start, stop):
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    x = as_tensor(x)
    axis = axis % x.ndim
    if not 0 <= start <= stop <= x.shape[axis]:
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape, dtype = x.shape, x.data.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return _result(x.data[index], (x,), bw)


# ---------------------------------------------------------------- NN primitives


def softmax(x, axis=-1):
    """Max-subtracted softmax along ``axis``."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), bw)


def layer_norm(x, gain, bias, eps=1e-9):
    """Normalise the last axis to zero mean / unit variance, then apply gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise DimensionError(f"layer_norm gain/bias {gain.shape}/{bias.shape} do not match last axis of {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gd = gain.data

    def bw(g):
        dxhat = g * gd
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, n)
        return dx, (flat_g * xhat.reshape(-1, n)).sum(axis=0), flat_g.sum(axis=0)

    return _result(xhat * gd + bias.data, (x, gain, bias), bw)


def embedding_lookup(table, ids):
    """Rows of ``table`` selected by integer ``ids``; gradient scatters back."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2 or ids.ndim != 1:
        raise DimensionError(f"embedding_lookup expects a 2-d table and 1-d ids, got {table.shape} and {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"ids out of range for table with {table.shape[0]} rows")
    shape, dtype = table.shape, table.data.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], (table,), bw)


def log_softmax_np(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets, mask=None):
    """Mean negative log-likelihood over the masked-in positions.

    ``logits`` is ``[T, V]``, ``targets`` integer ``[T]``, ``mask`` 0/1 ``[T]``.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy expects [T, V] logits and [T] targets, got {logits.shape}, {targets.shape}")
    mask = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    if mask.shape != targets.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match targets {targets.shape}")
    count = mask.sum()
    if count == 0:
        raise ValueError("no supervised positions: mask is all zeros")
    logp = log_softmax_np(logits.data)
    rows = np.arange(targets.size)
    nll = -logp[rows, targets]
    loss = (nll * mask).sum() / count

    def bw(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * (mask / count * g)[:, None],)

    return _result(np.asarray(loss, dtype=logits.data.dtype), (logits,), bw)


# ---------------------------------------------------------------- backward


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    The record is released afterwards; a second call on the same loss raises
    ``GraphError``.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward already ran on this graph; rebuild the forward pass first")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
    loss._consumed = True

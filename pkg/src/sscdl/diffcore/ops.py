"""Differentiable operations.

Every vjp is expressed with the operations of this module, which is what makes
second-order gradients available.  Shapes must match exactly for binary
operations; use :func:`expand` and :func:`sum_to` to broadcast explicitly.
"""
from __future__ import annotations

import weakref
from typing import Sequence

import numpy as np
from scipy import sparse

from .tensor import Tensor, make_node

LOG_EPS = 1e-12


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def const(x, dtype=None) -> Tensor:
    return Tensor(np.asarray(x, dtype=dtype))


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _same_shape(a, b, "add")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _same_shape(a, b, "sub")
    return make_node(a.data - b.data, (a, b), lambda g: (g, neg(g)))


def neg(a) -> Tensor:
    a = _t(a)
    return make_node(-a.data, (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _same_shape(a, b, "mul")
    return make_node(a.data * b.data, (a, b), lambda g: (mul(g, b), mul(g, a)))


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _same_shape(a, b, "div")

    def vjp(g):
        ga = div(g, b)
        return ga, neg(mul(ga, div(a, b)))

    return make_node(a.data / b.data, (a, b), vjp)


def scale(a, c: float) -> Tensor:
    a = _t(a)
    c = float(c)
    return make_node(a.data * a.data.dtype.type(c), (a,), lambda g: (scale(g, c),))


def shift(a, c: float) -> Tensor:
    a = _t(a)
    return make_node(a.data + a.data.dtype.type(c), (a,), lambda g: (g,))


def square(a) -> Tensor:
    a = _t(a)
    return make_node(a.data * a.data, (a,), lambda g: (mul(g, scale(a, 2.0)),))


def exp(a) -> Tensor:
    a = _t(a)
    out_data = np.exp(a.data)
    holder = []  # weak self-reference; a strong one would form a cycle

    def vjp(g):
        return (mul(g, holder[0]()),)

    out = make_node(out_data, (a,), vjp)
    holder.append(weakref.ref(out))
    return out


def clamp_min(a, lo: float) -> Tensor:
    a = _t(a)
    keep = (a.data >= lo).astype(a.data.dtype)
    return make_node(np.maximum(a.data, lo), (a,), lambda g: (mul(g, Tensor(keep)),))


def log(a, eps: float = LOG_EPS) -> Tensor:
    """Natural log with the input clamped to ``eps``."""
    x = clamp_min(a, eps)
    return make_node(np.log(x.data), (x,), lambda g: (div(g, x),))


def relu(a) -> Tensor:
    a = _t(a)
    mask = (a.data > 0).astype(a.data.dtype)
    return make_node(a.data * mask, (a,), lambda g: (mul(g, Tensor(mask)),))


def hinge(a) -> Tensor:
    """``max(0, a)``; same as :func:`relu`."""
    return relu(a)


def sigmoid(a) -> Tensor:
    a = _t(a)
    x = a.data
    # two-sided form avoids overflow in exp for large |x|
    z = np.exp(-np.abs(x))
    out_data = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    holder = []

    def vjp(g):
        y = holder[0]()
        return (mul(g, mul(y, shift(neg(y), 1.0))),)

    out = make_node(out_data, (a,), vjp)
    holder.append(weakref.ref(out))
    return out


def softmax(a) -> Tensor:
    """Softmax over the last axis (row max subtracted)."""
    a = _t(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=-1, keepdims=True)
    holder = []

    def vjp(g):
        y = holder[0]()
        s = sum(mul(g, y), axis=-1, keepdims=True)
        return (mul(y, sub(g, expand(s, y.shape))),)

    out = make_node(out_data, (a,), vjp)
    holder.append(weakref.ref(out))
    return out


def log_softmax(a) -> Tensor:
    a = _t(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    out_data = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    holder = []

    def vjp(g):
        y = holder[0]()
        s = sum(g, axis=-1, keepdims=True)
        return (sub(g, mul(exp(y), expand(s, y.shape))),)

    out = make_node(out_data, (a,), vjp)
    holder.append(weakref.ref(out))
    return out


# linear algebra and reductions --------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return make_node(
        a.data @ b.data, (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def transpose(a) -> Tensor:
    a = _t(a)
    if a.ndim != 2:
        raise ValueError("transpose expects a matrix")
    return make_node(a.data.T, (a,), lambda g: (transpose(g),))


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` with ``b`` broadcast over rows."""
    y = matmul(x, w)
    return add(y, expand(b, y.shape))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _t(a)
    out_data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    kept_shape = np.asarray(a.data.sum(axis=axis, keepdims=True)).shape
    in_shape = a.shape

    def vjp(g):
        return (expand(reshape(g, kept_shape), in_shape),)

    return make_node(out_data, (a,), vjp)


def mean(a, axis=None) -> Tensor:
    a = _t(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = _t(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    in_shape = a.shape
    return make_node(a.data.reshape(shape), (a,), lambda g: (reshape(g, in_shape),))


def expand(a, shape) -> Tensor:
    """Broadcast ``a`` to ``shape`` (numpy rules)."""
    a = _t(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    in_shape = a.shape
    return make_node(np.broadcast_to(a.data, shape), (a,), lambda g: (sum_to(g, in_shape),))


def sum_to(a, shape) -> Tensor:
    """Reduce ``a`` onto a broadcast-compatible smaller ``shape``."""
    a = _t(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and a.shape[i + lead] != 1
    )
    data = a.data.sum(axis=axes, keepdims=True).reshape(shape)
    in_shape = a.shape
    return make_node(data, (a,), lambda g: (expand(g, in_shape),))


# indexing -----------------------------------------------------------------

def gather(table, idx) -> Tensor:
    """Rows ``table[idx]``; ``idx`` is an integer array of any shape."""
    table = _t(table)
    idx = np.asarray(idx)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather: index out of range for table with {n} rows")
    return make_node(table.data[idx], (table,), lambda g: (scatter_add(g, idx, n),))


def _segment_sum(src: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    flat_idx = idx.reshape(-1)
    rows = src.reshape((flat_idx.size,) + src.shape[idx.ndim:])
    if rows.ndim == 2 and flat_idx.size:
        # one-hot (n, N) sparse matrix product; far faster than ufunc.at
        m = sparse.csr_matrix(
            (np.ones(flat_idx.size, dtype=src.dtype), (flat_idx, np.arange(flat_idx.size))),
            shape=(n, flat_idx.size),
        )
        return np.asarray(m @ rows, dtype=src.dtype)
    out = np.zeros((n,) + rows.shape[1:], dtype=src.dtype)
    if flat_idx.size:
        np.add.at(out, flat_idx, rows)
    return out


def scatter_add(src, idx, n: int) -> Tensor:
    """Adjoint of :func:`gather`: sums rows of ``src`` into ``n`` slots."""
    src = _t(src)
    idx = np.asarray(idx)
    return make_node(_segment_sum(src.data, idx, n), (src,), lambda g: (gather(g, idx),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_t(x) for x in tensors]
    ax = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [x.shape[ax] for x in tensors])

    def vjp(g):
        return tuple(take(g, int(lo), int(hi), ax) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_node(np.concatenate([x.data for x in tensors], axis=ax), tensors, vjp)


def take(a, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    a = _t(a)
    ax = axis % a.ndim
    sl = [slice(None)] * a.ndim
    sl[ax] = slice(start, stop)
    in_shape = a.shape
    return make_node(a.data[tuple(sl)], (a,), lambda g: (place(g, start, stop, in_shape, ax),))


def place(a, start: int, stop: int, shape, axis: int = 0) -> Tensor:
    """Zero array of ``shape`` with ``a`` written into ``[start:stop]``."""
    a = _t(a)
    out = np.zeros(shape, dtype=a.data.dtype)
    sl = [slice(None)] * len(shape)
    sl[axis] = slice(start, stop)
    out[tuple(sl)] = a.data
    return make_node(out, (a,), lambda g: (take(g, start, stop, axis),))

"""Tensor node type, gradient modes and the reverse-mode driver.

A :class:`Tensor` wraps a numpy array.  Operations in :mod:`sscdl.diffcore.ops`
record a vector-Jacobian product closure on their output whenever gradient
recording is enabled and at least one input requires a gradient.  Those vjp
closures are written in terms of the same differentiable operations, so the
backward pass can itself be recorded (``create_graph=True``) and
differentiated again.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class NumericalError(FloatingPointError):
    """Raised in checked mode when an operation produces NaN or Inf."""


_mode = threading.local()


def _get(name, default):
    return getattr(_mode, name, default)


def grad_enabled() -> bool:
    return _get("grad", True)


def is_checked() -> bool:
    return _get("checked", False)


@contextmanager
def _set_mode(name, value):
    old = _get(name, None)
    setattr(_mode, name, value)
    try:
        yield
    finally:
        if old is None:
            delattr(_mode, name)
        else:
            setattr(_mode, name, old)


def no_grad():
    """Context manager: operations inside produce constants."""
    return _set_mode("grad", False)


def enable_grad():
    return _set_mode("grad", True)


def checked(flag: bool = True):
    """Context manager raising :class:`NumericalError` on non-finite outputs."""
    return _set_mode("checked", flag)


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; the ops module is imported lazily to avoid a cycle
    def __add__(self, other):
        from . import ops
        return ops.add(self, other) if isinstance(other, Tensor) else ops.shift(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other) if isinstance(other, Tensor) else ops.shift(self, -other)

    def __rsub__(self, other):
        from . import ops
        return ops.shift(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other) if isinstance(other, Tensor) else ops.scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def make_node(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``data`` as the output of an operation over ``parents``."""
    if is_checked() and not np.all(np.isfinite(data)):
        raise NumericalError("non-finite value produced by %s" % getattr(vjp, "__qualname__", "op"))
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _topo_order(root: Tensor) -> list:
    """Post-order over the recorded graph (parents before children)."""
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


def _reaching(order: list, targets: set) -> set:
    """Ids of nodes in ``order`` that depend on any node id in ``targets``."""
    hit = set()
    for node in order:
        if id(node) in targets or any(id(p) in hit for p in node._parents):
            hit.add(id(node))
    return hit


def grad(
    root: Tensor,
    wrt: Iterable[Tensor],
    create_graph: bool = False,
    higher_wrt: Optional[Iterable[Tensor]] = None,
) -> list:
    """Gradients of scalar ``root`` with respect to each tensor in ``wrt``.

    Tensors not connected to ``root`` receive zeros.  With ``create_graph``
    the returned gradients are themselves recorded tensors.  ``higher_wrt``
    narrows what the recorded backward graph tracks: only dependence on those
    tensors is kept, everything else is folded into constants.  The result is
    then only valid for differentiating again with respect to ``higher_wrt``.
    """
    if root.data.shape != ():
        raise ValueError("grad root must be a scalar, got shape %s" % (root.data.shape,))
    wrt = list(wrt)
    wrt_ids = {id(w) for w in wrt}
    out = {}
    order = _topo_order(root) if root.requires_grad else []
    relevant = _reaching(order, wrt_ids)

    frozen = []
    if create_graph and higher_wrt is not None:
        dep = _reaching(order, {id(t) for t in higher_wrt})
        for node in order:
            if id(node) not in dep and node.requires_grad:
                node.requires_grad = False
                frozen.append(node)

    try:
        if id(root) in relevant:
            grads = {id(root): Tensor(np.ones((), dtype=root.data.dtype))}
            mode = enable_grad() if create_graph else no_grad()
            with mode:
                for node in reversed(order):
                    key = id(node)
                    if key not in relevant:
                        continue
                    g = grads.pop(key, None)
                    if g is None:
                        continue
                    if key in wrt_ids:
                        out[key] = g
                    if not node._parents:
                        continue
                    from .ops import add
                    for p, gp in zip(node._parents, node._vjp(g)):
                        pk = id(p)
                        if gp is None or pk not in relevant:
                            continue
                        grads[pk] = gp if pk not in grads else add(grads[pk], gp)
    finally:
        for node in frozen:
            node.requires_grad = True

    result = []
    for w in wrt:
        g = out.get(id(w))
        result.append(g if g is not None else Tensor(np.zeros_like(w.data)))
    return result


def backward(root: Tensor, params: dict) -> dict:
    """Gradient map ``name -> ndarray`` for a dict of parameter tensors."""
    names = list(params)
    gs = grad(root, [params[k] for k in names])
    return {k: g.data for k, g in zip(names, gs)}

"""Gradient of an outer loss through one plain gradient-descent step."""
from __future__ import annotations

import warnings
from typing import Callable

import numpy as np

from . import ops
from .tensor import Tensor, grad, is_checked, no_grad


def _leaves(arrays: dict) -> dict:
    return {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}


def grad_through_update(
    outer_loss_builder: Callable[[dict], Tensor],
    inner_loss_builder: Callable[[dict, dict], Tensor],
    theta: dict,
    eta: dict,
    alpha: float,
    mode: str = "exact",
    fd_eps: float = 0.01,
) -> tuple:
    """Meta-gradient of ``outer(theta - alpha * d inner(theta, eta) / d theta)``.

    ``mode="exact"`` differentiates the recorded inner backward pass, which
    yields ``-alpha * (d outer / d theta+) . (d^2 inner / d theta d eta)``
    exactly.  ``mode="first_order"`` replaces that mixed second derivative by a
    central difference of ``d inner / d eta`` along ``v = d outer / d theta+``
    (step ``fd_eps / |v|``), so only first-order passes are needed.

    Returns ``(meta_grads, outer_value, theta_plus)`` with numpy arrays.
    """
    names_t, names_e = list(theta), list(eta)
    th, et = _leaves(theta), _leaves(eta)
    if mode == "exact":
        inner = inner_loss_builder(th, et)
        gs = grad(inner, [th[k] for k in names_t], create_graph=True, higher_wrt=[et[k] for k in names_e])
        theta_plus = {k: ops.sub(th[k], ops.scale(g, alpha)) for k, g in zip(names_t, gs)}
        outer = outer_loss_builder(theta_plus)
        mg = grad(outer, [et[k] for k in names_e])
        meta = {k: g.data for k, g in zip(names_e, mg)}
        plus = {k: v.data for k, v in theta_plus.items()}
        value = float(outer.data)
    elif mode == "first_order":
        inner = inner_loss_builder(th, et)
        gs = grad(inner, [th[k] for k in names_t])
        plus = {k: (theta[k] - alpha * g.data).astype(theta[k].dtype) for k, g in zip(names_t, gs)}
        pl = _leaves(plus)
        outer = outer_loss_builder(pl)
        value = float(outer.data)
        v = {k: g.data for k, g in zip(names_t, grad(outer, [pl[k] for k in names_t]))}
        norm = np.sqrt(np.sum([np.sum(np.square(x, dtype=np.float64)) for x in v.values()]))
        if norm == 0.0:
            meta = {k: np.zeros_like(x) for k, x in eta.items()}
        else:
            eps = fd_eps / norm

            def eta_grad(sign):
                shifted = {k: Tensor(theta[k] + sign * eps * v[k]) for k in names_t}
                e2 = _leaves(eta)
                with_graph = inner_loss_builder(shifted, e2)
                return [g.data for g in grad(with_graph, [e2[k] for k in names_e])]

            gp, gm = eta_grad(1.0), eta_grad(-1.0)
            meta = {k: (-alpha * (a - b) / (2.0 * eps)).astype(eta[k].dtype) for k, a, b in zip(names_e, gp, gm)}
    else:
        raise ValueError(f"unknown meta-gradient mode {mode!r}")

    if is_checked() and all(not np.any(m) for m in meta.values()):
        warnings.warn("meta-gradient is identically zero: inner loss does not depend on eta", RuntimeWarning)
    return meta, value, plus


def outer_value(outer_loss_builder, inner_loss_builder, theta: dict, eta: dict, alpha: float) -> float:
    """Forward-only evaluation of the meta objective (finite-difference oracle)."""
    th = _leaves(theta)
    with no_grad():
        et = {k: Tensor(v) for k, v in eta.items()}
    inner = inner_loss_builder(th, et)
    gs = grad(inner, [th[k] for k in theta])
    with no_grad():
        plus = {k: Tensor(theta[k] - alpha * g.data) for k, g in zip(theta, gs)}
        return float(outer_loss_builder(plus).data)

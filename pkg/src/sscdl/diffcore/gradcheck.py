"""Central finite-difference checks against the reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .tensor import Tensor, grad, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - f| / max(max|a|, max|f|)``; zero when both vanish."""
    diff = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    ref = max(float(np.max(np.abs(analytic))) if analytic.size else 0.0,
              float(np.max(np.abs(numeric))) if numeric.size else 0.0)
    if ref == 0.0:
        return diff
    return diff / ref


def numeric_gradient(
    f: Callable[[dict], float],
    params: dict,
    step: float = 1e-5,
    names: Optional[list] = None,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> dict:
    """Central differences of scalar ``f`` over arrays in ``params``.

    With ``max_entries`` only a random subset of coordinates per array is
    probed; the result then carries NaN in unprobed slots.
    """
    names = list(params) if names is None else names
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    out = {}
    for name in names:
        arr = work[name]
        g = np.full(arr.shape, np.nan) if max_entries else np.zeros(arr.shape)
        flat = arr.reshape(-1)
        coords = range(flat.size)
        if max_entries and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(flat.size, size=max_entries, replace=False)
        gflat = g.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = f(work)
            flat[i] = orig - step
            fm = f(work)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
        out[name] = g
    return out


@dataclass
class GradCheckReport:
    name: str
    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max relative error {self.max_rel_error:.3e} (tol {self.tolerance:g})"


def compare(name: str, analytic: dict, numeric: dict, tolerance: float) -> GradCheckReport:
    report = GradCheckReport(name=name, tolerance=tolerance)
    for k, f in numeric.items():
        probed = ~np.isnan(f)
        report.errors[k] = relative_error(np.asarray(analytic[k])[probed], f[probed])
    return report


def finite_diff_check(
    loss_builder: Callable[[dict], Tensor],
    params: dict,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    name: str = "loss",
    max_entries: Optional[int] = None,
) -> GradCheckReport:
    """Compare ``grad(loss_builder(leaves))`` with central differences.

    ``params`` maps names to float64 arrays; ``loss_builder`` receives a dict
    of leaf tensors with the same keys and returns a scalar tensor.
    """
    leaves = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}
    root = loss_builder(leaves)
    names = list(leaves)
    analytic = {k: g.data for k, g in zip(names, grad(root, [leaves[k] for k in names]))}

    def f(arrays):
        with no_grad():
            return float(loss_builder({k: Tensor(v) for k, v in arrays.items()}).data)

    numeric = numeric_gradient(f, params, step=step, max_entries=max_entries)
    return compare(name, analytic, numeric, tolerance)

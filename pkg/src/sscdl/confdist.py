"""Discrete confidence distributions over the grid ``{0, 1/n, ..., 1}``."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

KL_EPS = 1e-12


@dataclass(frozen=True)
class ConfidenceGrid:
    n: int = 100

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"grid resolution must be a positive integer, got {self.n}")

    @property
    def size(self) -> int:
        return self.n + 1

    @cached_property
    def labels(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    def nearest_index(self, s):
        """Nearest grid index to ``s``; exact halfway points go to the lower index."""
        s = np.asarray(s, dtype=np.float64)
        scaled = s * self.n
        lo = np.floor(scaled)
        idx = np.where(scaled - lo > 0.5, lo + 1, lo)
        return np.clip(idx, 0, self.n).astype(np.int64)


DEFAULT_GRID = ConfidenceGrid()


def discretize(s, sigma: float, grid: ConfidenceGrid = DEFAULT_GRID) -> np.ndarray:
    """Gaussian ``N(s, sigma^2)`` evaluated at the grid labels and normalized.

    ``s`` may be a scalar (returns shape ``(n+1,)``) or an array (returns
    ``s.shape + (n+1,)``).
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    s = np.asarray(s, dtype=np.float64)
    if not np.all((s >= 0) & (s <= 1)):  # also catches NaN
        raise ValueError("confidence must lie in [0, 1]")
    logd = -np.square(grid.labels - s[..., None]) / (2.0 * sigma * sigma)
    logd -= logd.max(axis=-1, keepdims=True)
    d = np.exp(logd)
    return d / d.sum(axis=-1, keepdims=True)


def one_hot(s, grid: ConfidenceGrid = DEFAULT_GRID) -> np.ndarray:
    """All mass on the nearest grid label (the ``sigma -> 0`` limit)."""
    idx = grid.nearest_index(s)
    out = np.zeros(idx.shape + (grid.size,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def expectation(dist, grid: ConfidenceGrid = DEFAULT_GRID):
    return np.asarray(dist) @ grid.labels


def kl_divergence(target, predicted, eps: float = KL_EPS):
    """``sum_i t_i ln(t_i / p_i)`` with ``0 ln 0 = 0`` and ``p`` clamped to ``eps``."""
    t = np.asarray(target, dtype=np.float64)
    p = np.maximum(np.asarray(predicted, dtype=np.float64), eps)
    pos = t > 0
    terms = np.zeros(np.broadcast(t, p).shape)
    tb = np.broadcast_to(t, terms.shape)
    pb = np.broadcast_to(p, terms.shape)
    posb = np.broadcast_to(pos, terms.shape)
    terms[posb] = tb[posb] * (np.log(tb[posb]) - np.log(pb[posb]))
    return terms.sum(axis=-1)


def max_degree(dist) -> tuple:
    """``(index, degree)`` of the largest description degree (first on ties)."""
    d = np.asarray(dist)
    i = int(np.argmax(d))
    return i, float(d[i])


def to_csv_row(dist) -> str:
    return ",".join(repr(float(x)) for x in np.asarray(dist))

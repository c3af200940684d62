"""Shared architecture of the relational learner and the pseudo-label generator.

Both heads read the concatenation ``h || r || t`` of the three embeddings:

* confidence head: ``softmax(W2 relu(W1 x + b1) + b2)`` over ``n + 1`` labels
* rank head: ``sigmoid(w2 . relu(V1 x + c1) + c2)``

The first layer of a head is linear in the concatenation, so ``x @ W1`` equals
``h @ W1[:d] + r @ W1[d:2d] + t @ W1[2d:]``.  :func:`rank_logits` uses that
split form: the entity table is projected once and rows are gathered per
triple, which is what makes scoring 50 negatives per positive (or every
entity as a candidate tail) affordable.  :func:`rank_logits_concat` is the
literal form and is kept as a reference.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .confdist import DEFAULT_GRID, ConfidenceGrid
from .diffcore import Tensor, no_grad, ops

CP_KEYS = ("cp_w1", "cp_b1", "cp_w2", "cp_b2")
LP_KEYS = ("lp_w1", "lp_b1", "lp_w2", "lp_b2")
PARAM_KEYS = ("ent", "rel") + CP_KEYS + LP_KEYS + ("u_cp", "u_lp")


def parameter_count(n_entities: int, n_relations: int, dim: int, n: int = 100, hidden=None) -> int:
    h = dim if hidden is None else hidden
    return (n_entities * dim + n_relations * dim
            + (3 * dim * h + h) + (h * (n + 1) + (n + 1))
            + (3 * dim * h + h) + (h + 1) + 2)


@dataclass
class ModelParams:
    """Named parameter arrays plus the dimensions they were built for."""

    arrays: dict
    n_entities: int
    n_relations: int
    dim: int
    hidden: int
    n_labels: int

    def leaves(self, requires_grad: bool = True) -> dict:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.arrays.items()}

    def constants(self) -> dict:
        return self.leaves(requires_grad=False)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, self.n_entities,
                           self.n_relations, self.dim, self.hidden, self.n_labels)

    def with_arrays(self, arrays: dict) -> "ModelParams":
        return ModelParams(dict(arrays), self.n_entities, self.n_relations, self.dim, self.hidden, self.n_labels)

    def astype(self, dtype) -> "ModelParams":
        return self.with_arrays({k: v.astype(dtype) for k, v in self.arrays.items()})

    @property
    def dtype(self):
        return self.arrays["ent"].dtype

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))

    def dims(self) -> dict:
        return dict(n_entities=self.n_entities, n_relations=self.n_relations,
                    dim=self.dim, hidden=self.hidden, n_labels=self.n_labels)


def init_params(n_entities: int, n_relations: int, dim: int, seed: int, n: int = 100,
                hidden=None, dtype=np.float64, zero_output: bool = False) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, ``u = 0``.

    Embedding rows use ``fan_in = dim``.  ``zero_output`` zeroes both output
    layers, making every prediction uniform / 0.5.
    """
    h = dim if hidden is None else hidden
    rng = np.random.default_rng(seed)

    def unif(shape, fan_in):
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, size=shape)

    a = {
        "ent": unif((n_entities, dim), dim),
        "rel": unif((n_relations, dim), dim),
        "cp_w1": unif((3 * dim, h), 3 * dim),
        "cp_b1": np.zeros(h),
        "cp_w2": unif((h, n + 1), h),
        "cp_b2": np.zeros(n + 1),
        "lp_w1": unif((3 * dim, h), 3 * dim),
        "lp_b1": np.zeros(h),
        "lp_w2": unif((h, 1), h),
        "lp_b2": np.zeros(1),
        "u_cp": np.zeros(()),
        "u_lp": np.zeros(()),
    }
    if zero_output:
        for k in ("cp_w2", "cp_b2", "lp_w2", "lp_b2"):
            a[k] = np.zeros_like(a[k])
    a = {k: np.asarray(v, dtype=dtype) for k, v in a.items()}
    return ModelParams(a, n_entities, n_relations, dim, h, n + 1)


def _check_bounds(P: dict, triples: np.ndarray):
    n_e, n_r = P["ent"].shape[0], P["rel"].shape[0]
    if triples.size and (triples.min() < 0 or triples[:, [0, 2]].max() >= n_e or triples[:, 1].max() >= n_r):
        raise IndexError("triple index out of bounds for the model vocabulary")


def concat_input(P: dict, triples) -> Tensor:
    """``h || r || t`` rows, shape (B, 3d)."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    _check_bounds(P, triples)
    return ops.concat([ops.gather(P["ent"], triples[:, 0]), ops.gather(P["rel"], triples[:, 1]),
                       ops.gather(P["ent"], triples[:, 2])], axis=1)


def confidence_logits(P: dict, triples) -> Tensor:
    """Pre-softmax confidence head output, shape (B, n+1)."""
    x = concat_input(P, triples)
    hid = ops.relu(ops.affine(x, P["cp_w1"], P["cp_b1"]))
    return ops.affine(hid, P["cp_w2"], P["cp_b2"])


def rank_logits_concat(P: dict, triples) -> Tensor:
    x = concat_input(P, triples)
    hid = ops.relu(ops.affine(x, P["lp_w1"], P["lp_b1"]))
    return ops.reshape(ops.affine(hid, P["lp_w2"], P["lp_b2"]), (x.shape[0],))


def rank_logits(P: dict, triples) -> Tensor:
    """Pre-sigmoid rank head output for triples of shape (..., 3)."""
    triples = np.asarray(triples, dtype=np.int64)
    lead = triples.shape[:-1]
    flat = triples.reshape(-1, 3)
    _check_bounds(P, flat)
    d = P["ent"].shape[1]
    w1 = P["lp_w1"]
    proj_h = ops.matmul(P["ent"], ops.take(w1, 0, d, axis=0))
    proj_r = ops.matmul(P["rel"], ops.take(w1, d, 2 * d, axis=0))
    proj_t = ops.matmul(P["ent"], ops.take(w1, 2 * d, 3 * d, axis=0))
    pre = ops.add(ops.add(ops.gather(proj_h, flat[:, 0]), ops.gather(proj_r, flat[:, 1])),
                  ops.gather(proj_t, flat[:, 2]))
    hid = ops.relu(ops.add(pre, ops.expand(P["lp_b1"], pre.shape)))
    out = ops.affine(hid, P["lp_w2"], P["lp_b2"])
    return ops.reshape(out, lead)


def _as_tensors(params) -> dict:
    if isinstance(params, ModelParams):
        return params.constants()
    return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}


def predict_confidence_distribution(params, triples) -> np.ndarray:
    """Predicted confidence distributions, shape (B, n+1)."""
    with no_grad():
        return ops.softmax(confidence_logits(_as_tensors(params), triples)).data


def predict_confidence(params, triples, grid: ConfidenceGrid = DEFAULT_GRID, chunk: int = 65536) -> np.ndarray:
    """Expected confidence of the predicted distribution, shape (B,)."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    out = [predict_confidence_distribution(params, triples[i:i + chunk]) @ grid.labels
           for i in range(0, len(triples), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def predict_rank_score(params, triples) -> np.ndarray:
    with no_grad():
        return ops.sigmoid(rank_logits(_as_tensors(params), triples)).data


class TailScorer:
    """Rank-head logits of ``(h, r, e)`` for every entity ``e``.

    The entity projections are computed once per parameter snapshot.
    """

    def __init__(self, params: ModelParams):
        a = params.arrays
        d = params.dim
        w1 = a["lp_w1"]
        self.proj_h = a["ent"] @ w1[:d]
        self.proj_r = a["rel"] @ w1[d:2 * d]
        self.proj_t = a["ent"] @ w1[2 * d:]
        self.b1 = a["lp_b1"]
        self.w2 = a["lp_w2"][:, 0]
        self.b2 = a["lp_b2"][0]

    def logits(self, heads, relations, budget: int = 1 << 24) -> np.ndarray:
        heads = np.asarray(heads, dtype=np.int64)
        relations = np.asarray(relations, dtype=np.int64)
        n_e, h = self.proj_t.shape
        base = self.proj_h[heads] + self.proj_r[relations] + self.b1
        out = np.empty((len(heads), n_e), dtype=self.proj_t.dtype)
        step = max(1, budget // max(1, n_e * h))
        for i in range(0, len(heads), step):
            pre = base[i:i + step, None, :] + self.proj_t[None, :, :]
            np.maximum(pre, 0, out=pre)
            out[i:i + step] = pre @ self.w2 + self.b2
        return out

"""Training objectives.

All sums run over the batch (no averaging) unless ``normalize`` is set, in
which case each sum is divided by its number of terms.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import confdist
from .confdist import DEFAULT_GRID, ConfidenceGrid
from .dataset import QuadrupleSet
from .diffcore import Tensor, ops
from .diffcore.meta import grad_through_update
from .model import confidence_logits, rank_logits


@dataclass
class LabeledBatch:
    triples: np.ndarray
    confidence: np.ndarray
    targets: np.ndarray

    @classmethod
    def build(cls, quads: QuadrupleSet, sigma: float, grid: ConfidenceGrid = DEFAULT_GRID,
              one_hot: bool = False, dtype=np.float64) -> "LabeledBatch":
        if one_hot:
            targets = confdist.one_hot(quads.confidence, grid)
        else:
            targets = confdist.discretize(quads.confidence, sigma, grid)
        return cls(quads.triples, quads.confidence.astype(dtype), targets.astype(dtype))

    def __len__(self):
        return len(self.triples)

    def subset(self, idx) -> "LabeledBatch":
        return LabeledBatch(self.triples[idx], self.confidence[idx], self.targets[idx])


@dataclass
class PseudoBatch:
    """Unlabeled triples with generated distributions.

    ``dists`` is a Tensor: either recorded (gradient path to the generator) or
    a constant.  ``scalars`` is the expectation of each distribution.
    """

    triples: np.ndarray
    dists: Tensor
    scalars: Tensor

    def __len__(self):
        return len(self.triples)

    def subset(self, idx) -> "PseudoBatch":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.int64)
        return PseudoBatch(self.triples[idx], Tensor(self.dists.data[idx]), Tensor(self.scalars.data[idx]))

    @property
    def max_degrees(self) -> np.ndarray:
        return self.dists.data.max(axis=1) if len(self) else np.zeros(0)


def _labels(grid: ConfidenceGrid, dtype) -> Tensor:
    return Tensor(grid.labels.astype(dtype).reshape(-1, 1))


def expected_confidence(dists: Tensor, grid: ConfidenceGrid) -> Tensor:
    return ops.reshape(ops.matmul(dists, _labels(grid, dists.dtype)), (dists.shape[0],))


def _entropy_term(targets) -> Tensor:
    """``sum t ln t`` with ``0 ln 0 = 0``; differentiable when ``targets`` is."""
    if isinstance(targets, Tensor) and targets.requires_grad:
        return ops.sum(ops.mul(targets, ops.log(targets)))
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    pos = t > 0
    return Tensor(np.asarray(np.sum(t[pos] * np.log(t[pos])), dtype=t.dtype))


def cp_terms(logits: Tensor, targets, scalars, beta: float, grid: ConfidenceGrid,
             normalize: bool = False) -> Tensor:
    """``sum KL(target || softmax(logits)) + beta * sum (E[pred] - s)^2``."""
    m = logits.shape[0]
    if m == 0:
        return Tensor(np.zeros((), dtype=logits.dtype))
    tgt = targets if isinstance(targets, Tensor) else Tensor(np.asarray(targets, dtype=logits.dtype))
    sc = scalars if isinstance(scalars, Tensor) else Tensor(np.asarray(scalars, dtype=logits.dtype))
    logp = ops.log_softmax(logits)
    kl = ops.sub(_entropy_term(tgt), ops.sum(ops.mul(tgt, logp)))
    mse = ops.sum(ops.square(ops.sub(expected_confidence(ops.exp(logp), grid), sc)))
    total = ops.add(kl, ops.scale(mse, beta))
    return ops.scale(total, 1.0 / m) if normalize else total


def loss_cp(P: dict, batch: LabeledBatch, beta: float, grid: ConfidenceGrid = DEFAULT_GRID,
            normalize: bool = False) -> Tensor:
    if not len(batch):
        return Tensor(np.zeros((), dtype=P["ent"].dtype))
    return cp_terms(confidence_logits(P, batch.triples), batch.targets, batch.confidence, beta, grid, normalize)


def loss_cp_pseudo(P: dict, labeled: LabeledBatch, pseudo: Optional[PseudoBatch], beta: float, w_p: float,
                   grid: ConfidenceGrid = DEFAULT_GRID, normalize: bool = False) -> Tensor:
    """Labeled CP loss plus ``w_p`` times the same loss on pseudo-labeled triples."""
    base = loss_cp(P, labeled, beta, grid, normalize)
    if pseudo is None or not len(pseudo):
        return base
    extra = cp_terms(confidence_logits(P, pseudo.triples), pseudo.dists, pseudo.scalars, beta, grid, normalize)
    return ops.add(base, ops.scale(extra, w_p))


def margin_terms(pos_scores: Tensor, neg_scores: Tensor, confidence, gamma: float,
                 normalize: bool = False) -> Tensor:
    """``sum_i sum_j s_i * max(0, gamma + neg_ij - pos_i)`` for scores (B,), (B, k)."""
    b, k = neg_scores.shape
    if b == 0:
        return Tensor(np.zeros((), dtype=neg_scores.dtype))
    pos = ops.expand(ops.reshape(pos_scores, (b, 1)), (b, k))
    viol = ops.hinge(ops.shift(ops.sub(neg_scores, pos), gamma))
    w = Tensor(np.broadcast_to(np.asarray(confidence, dtype=neg_scores.dtype)[:, None], (b, k)))
    total = ops.sum(ops.mul(w, viol))
    return ops.scale(total, 1.0 / (b * k)) if normalize else total


def loss_lp(P: dict, positives: LabeledBatch, negatives: np.ndarray, gamma: float,
            normalize: bool = False) -> Tensor:
    """Margin ranking loss; ``negatives`` has shape (B, k, 3)."""
    b = len(positives)
    if b == 0:
        return Tensor(np.zeros((), dtype=P["ent"].dtype))
    k = negatives.shape[1]
    allt = np.concatenate([positives.triples, negatives.reshape(-1, 3)])
    logits = rank_logits(P, allt)
    scores = ops.sigmoid(logits)
    pos = ops.take(scores, 0, b, axis=0)
    neg = ops.reshape(ops.take(scores, b, b + b * k, axis=0), (b, k))
    return margin_terms(pos, neg, positives.confidence, gamma, normalize)


def combined_loss(l_cp: Tensor, l_lp: Tensor, u_cp: Tensor, u_lp: Tensor, phi: float) -> Tensor:
    """Uncertainty-weighted sum with ``lambda^2 = exp(u)``:

    ``exp(-u_cp)/2 * L_cp + phi * exp(-u_lp)/2 * L_lp + (u_cp + u_lp)/2``
    """
    a = ops.mul(ops.scale(ops.exp(ops.neg(u_cp)), 0.5), l_cp)
    b = ops.mul(ops.scale(ops.exp(ops.neg(u_lp)), 0.5 * phi), l_lp)
    return ops.add(ops.add(a, b), ops.scale(ops.add(u_cp, u_lp), 0.5))


@dataclass
class LossSettings:
    beta: float = 1.0
    gamma: float = 0.1
    phi: float = 0.1
    w_p: float = 0.7
    normalize: bool = False
    grid: ConfidenceGrid = DEFAULT_GRID

    @classmethod
    def from_config(cls, cfg) -> "LossSettings":
        return cls(cfg.beta, cfg.gamma, cfg.phi, cfg.w_p, cfg.normalize_loss, ConfidenceGrid(cfg.n))


def total_loss(P: dict, labeled: LabeledBatch, negatives: np.ndarray, s: LossSettings,
               pseudo: Optional[PseudoBatch] = None) -> Tensor:
    """Full relational-learner objective; pseudo items enter the CP term only."""
    l_cp = loss_cp_pseudo(P, labeled, pseudo, s.beta, s.w_p, s.grid, s.normalize)
    l_lp = loss_lp(P, labeled, negatives, s.gamma, s.normalize)
    return combined_loss(l_cp, l_lp, P["u_cp"], P["u_lp"], s.phi)


def pseudo_from_generator(E: dict, triples: np.ndarray, grid: ConfidenceGrid) -> PseudoBatch:
    """Generator confidence-head output on ``triples``; recorded if ``E`` is."""
    dists = ops.softmax(confidence_logits(E, triples))
    return PseudoBatch(np.asarray(triples), dists, expected_confidence(dists, grid))


def meta_gradient(eta: dict, theta: dict, labeled: LabeledBatch, negatives: np.ndarray,
                  unlabeled: np.ndarray, alpha: float, s: LossSettings, mode: str = "exact",
                  fd_eps: float = 0.01) -> tuple:
    """Gradient w.r.t. the generator of the learner's labeled loss after one step.

    The step is ``theta+ = theta - alpha * grad_theta L(D u D_tmp, theta)`` where
    ``D_tmp`` pairs ``unlabeled`` with the generator's distributions.  Returns
    ``(grads, meta_loss_value)``.
    """
    if len(unlabeled) == 0:
        raise ValueError("meta step needs a nonempty unlabeled batch")

    def inner(T, E):
        return total_loss(T, labeled, negatives, s, pseudo_from_generator(E, unlabeled, s.grid))

    def outer(T):
        return total_loss(T, labeled, negatives, s)

    grads, value, _ = grad_through_update(outer, inner, theta, eta, alpha, mode=mode, fd_eps=fd_eps)
    return grads, value


def meta_loss(eta: dict, theta: dict, labeled: LabeledBatch, negatives: np.ndarray,
              unlabeled: np.ndarray, alpha: float, s: LossSettings) -> float:
    """Forward value of the meta objective (no graph kept)."""
    from .diffcore.meta import outer_value

    def inner(T, E):
        return total_loss(T, labeled, negatives, s, pseudo_from_generator(E, unlabeled, s.grid))

    def outer(T):
        return total_loss(T, labeled, negatives, s)

    return outer_value(outer, inner, theta, eta, alpha)

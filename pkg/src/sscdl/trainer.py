"""Meta self-training loop.

Each labeled minibatch is processed according to the phase of its epoch
(epochs are numbered from 1):

* ``WARMUP`` (epoch < t_pcdg): one learner update on the labeled batch.
* ``META_WARMUP`` (t_pcdg <= epoch < t_cdlrl): one generator meta-update,
  then the learner update on labeled data only.
* ``FULL`` (epoch >= t_cdlrl): generator meta-update, then the learner update
  on the labeled batch plus the selected pseudo-labeled triples.

The unlabeled minibatch is one fresh head-or-tail corruption per labeled
triple, shared by the meta-update and pseudo-label generation of that step.
"""
from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .config import TrainConfig
from .confdist import ConfidenceGrid
from .dataset import DatasetSplit, corrupt
from .diffcore import AdamState, NumericalError, adam_step, grad, no_grad, save_checkpoint
from .evaluation import MetricReport, evaluate
from .losses import LabeledBatch, LossSettings, PseudoBatch, meta_gradient, pseudo_from_generator, total_loss
from .model import ModelParams, init_params

log = logging.getLogger(__name__)


class Phase(enum.Enum):
    WARMUP = "warmup"
    META_WARMUP = "meta_warmup"
    FULL = "full_meta_self_training"


def phase_of(epoch: int, cfg: TrainConfig) -> Phase:
    if epoch < cfg.t_pcdg:
        return Phase.WARMUP
    if epoch < cfg.t_cdlrl:
        return Phase.META_WARMUP
    return Phase.FULL


def generate_pseudo(eta: ModelParams, triples: np.ndarray, grid: ConfidenceGrid, detach: bool = True) -> PseudoBatch:
    """Generator distributions for ``triples``; constants when ``detach``."""
    if detach:
        with no_grad():
            return pseudo_from_generator(eta.constants(), triples, grid)
    return pseudo_from_generator(eta.leaves(), triples, grid)


def select_pseudo(pseudo: PseudoBatch, threshold: float) -> PseudoBatch:
    """Keep items whose highest description degree exceeds ``threshold``."""
    keep = np.nonzero(pseudo.max_degrees > threshold)[0]
    return pseudo.subset(keep)


@dataclass
class TrainState:
    theta: ModelParams
    eta: Optional[ModelParams]
    adam_theta: AdamState
    adam_eta: AdamState
    epoch: int = 0
    log: list = field(default_factory=list)


@dataclass
class TrainResult:
    state: TrainState
    best_params: ModelParams
    best_epoch: int
    best_val_mse: float
    final_report: MetricReport


def _streams(seed: int) -> dict:
    names = ("theta_init", "eta_init", "shuffle", "negatives", "unlabeled")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return dict(zip(names, seqs))


def checkpoint_meta(cfg: TrainConfig, split: DatasetSplit, params: ModelParams, epoch: int, extra=None) -> dict:
    meta = {
        "format": "sscdl-model",
        "version": __version__,
        "config": cfg.to_text(),
        "config_hash": cfg.digest(),
        "vocab_hash": split.vocab.digest(),
        "entities": split.vocab.entities,
        "relations": split.vocab.relations,
        "dims": params.dims(),
        "epoch": epoch,
    }
    meta.update(extra or {})
    return meta


def save_model(path, cfg: TrainConfig, split: DatasetSplit, theta: ModelParams, eta: Optional[ModelParams],
               epoch: int, extra=None) -> None:
    arrays = {f"theta/{k}": v for k, v in theta.arrays.items()}
    if eta is not None:
        arrays.update({f"eta/{k}": v for k, v in eta.arrays.items()})
    save_checkpoint(path, arrays, checkpoint_meta(cfg, split, theta, epoch, extra))


def params_from_checkpoint(arrays: dict, meta: dict, prefix: str = "theta/") -> ModelParams:
    a = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    return ModelParams(a, **meta["dims"])


class Trainer:
    """Owns learner/generator parameters and optimizer states for one run.

    ``on_step`` is called after every minibatch with a dict describing it;
    ``on_epoch`` after every epoch with the :class:`TrainState`.
    """

    def __init__(self, cfg: TrainConfig, split: DatasetSplit, out_dir=None,
                 on_step: Optional[Callable] = None, on_epoch: Optional[Callable] = None):
        self.cfg = cfg.validate()
        if not len(split.train):
            raise ValueError("training split is empty")
        self.split = split
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.on_step = on_step
        self.on_epoch = on_epoch
        self.dtype = np.dtype(cfg.dtype)
        self.grid = ConfidenceGrid(cfg.n)
        self.losses = LossSettings.from_config(cfg)
        self.mst = cfg.ablation != "no_mst"
        seqs = _streams(cfg.seed)
        self.rng = {k: np.random.default_rng(s) for k, s in seqs.items() if k not in ("theta_init", "eta_init")}
        v = split.vocab
        theta = init_params(v.n_entities, v.n_relations, cfg.dim, seeds_int(seqs["theta_init"]), n=cfg.n,
                            hidden=cfg.hidden, dtype=self.dtype)
        eta = None
        if self.mst:
            eta = init_params(v.n_entities, v.n_relations, cfg.dim, seeds_int(seqs["eta_init"]), n=cfg.n,
                              hidden=cfg.hidden, dtype=self.dtype)
        self.state = TrainState(theta, eta, AdamState(lr=cfg.alpha), AdamState(lr=cfg.alpha))
        self.labeled = LabeledBatch.build(split.train, cfg.sigma, self.grid,
                                          one_hot=cfg.ablation == "no_cdl", dtype=self.dtype)
        self.unlabeled_pool = None
        if self.mst and cfg.freeze_unlabeled:
            self.unlabeled_pool = corrupt(split.train.triples, 1, v.n_entities, split.known, self.rng["unlabeled"])[:, 0]

    # single minibatch --------------------------------------------------

    def step(self, idx: np.ndarray, epoch: int, phase: Phase) -> dict:
        cfg, st, split = self.cfg, self.state, self.split
        lb = self.labeled.subset(idx)
        neg = corrupt(lb.triples, cfg.k_neg, split.vocab.n_entities, split.known, self.rng["negatives"])
        info = {"epoch": epoch, "phase": phase, "batch": len(idx), "meta_loss": None,
                "eta_updated": False, "n_pseudo_generated": 0, "n_pseudo_used": 0}

        pseudo = None
        if self.mst and phase is not Phase.WARMUP:
            if self.unlabeled_pool is not None:
                du = self.unlabeled_pool[idx]
            else:
                du = corrupt(lb.triples, 1, split.vocab.n_entities, split.known, self.rng["unlabeled"])[:, 0]
            g_eta, info["meta_loss"] = meta_gradient(
                st.eta.arrays, st.theta.arrays, lb, neg, du, cfg.alpha, self.losses,
                mode=cfg.meta_mode, fd_eps=cfg.meta_fd_eps)
            _check_finite(info["meta_loss"], "meta loss", epoch)
            st.eta = st.eta.with_arrays(adam_step(st.eta.arrays, g_eta, st.adam_eta))
            info["eta_updated"] = True
            if phase is Phase.FULL:
                generated = generate_pseudo(st.eta, du, self.grid, detach=True)
                pseudo = select_pseudo(generated, cfg.threshold)
                info["n_pseudo_generated"] = len(generated)
                info["n_pseudo_used"] = len(pseudo)
                if not len(pseudo):
                    log.debug("epoch %d: no pseudo item passed the threshold", epoch)
                    pseudo = None

        T = st.theta.leaves()
        loss = self.learner_loss(T, lb, neg, pseudo)
        info["loss"] = float(loss.data)
        _check_finite(info["loss"], "training loss", epoch)
        names = list(T)
        gs = grad(loss, [T[k] for k in names])
        st.theta = st.theta.with_arrays(adam_step(st.theta.arrays, {k: g.data for k, g in zip(names, gs)}, st.adam_theta))
        return info

    def learner_loss(self, T: dict, labeled, negatives: np.ndarray, pseudo: Optional[PseudoBatch]):
        """Objective of the learner update; a seam for instrumentation."""
        return total_loss(T, labeled, negatives, self.losses, pseudo)

    # full run ----------------------------------------------------------

    def evaluate_valid(self, params: ModelParams) -> MetricReport:
        return evaluate(params, self.split.valid, self.split.known, self.grid,
                        filtered=self.cfg.filtered, ranking=self.cfg.eval_ranking)

    def run(self) -> TrainResult:
        cfg, st = self.cfg, self.state
        n = len(self.split.train)
        best = (np.inf, 0, st.theta.copy())
        report = None
        log_fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            log_fh = (self.out_dir / "metrics.jsonl").open("w", encoding="utf-8")
        try:
            for epoch in range(st.epoch + 1, cfg.t_max + 1):
                phase = phase_of(epoch, cfg)
                t0 = time.perf_counter()
                order = self.rng["shuffle"].permutation(n)
                losses, n_sel = [], 0
                for b in range(0, n, cfg.batch_size):
                    info = self.step(order[b:b + cfg.batch_size], epoch, phase)
                    losses.append(info["loss"])
                    n_sel += info["n_pseudo_used"]
                    if self.on_step:
                        self.on_step(info)
                st.epoch = epoch
                rec = {"epoch": epoch, "phase": phase.value, "train_loss": float(np.sum(losses)),
                       "val_mse": None, "val_mae": None, "val_wmrr": None, "val_hits1": None,
                       "n_pseudo_selected": n_sel}
                if (epoch % cfg.eval_every == 0 or epoch == cfg.t_max) and len(self.split.valid):
                    report = self.evaluate_valid(st.theta)
                    rec.update(val_mse=report.mse, val_mae=report.mae, val_wmrr=report.wmrr, val_hits1=report.hits1)
                    if report.mse < best[0]:
                        best = (report.mse, epoch, st.theta.copy())
                        if self.out_dir is not None:
                            save_model(self.out_dir / "best.ckpt", cfg, self.split, st.theta, st.eta, epoch,
                                       {"val": report.to_dict()})
                rec["seconds"] = round(time.perf_counter() - t0, 3)
                st.log.append(rec)
                if log_fh:
                    log_fh.write(json.dumps({k: v for k, v in rec.items() if k != "seconds"}) + "\n")
                    log_fh.flush()
                log.info("epoch %d %s loss=%.4f val_mse=%s pseudo=%d", epoch, phase.value,
                         rec["train_loss"], rec["val_mse"], n_sel)
                if self.on_epoch:
                    self.on_epoch(st)
            if self.out_dir is not None:
                save_model(self.out_dir / "final.ckpt", cfg, self.split, st.theta, st.eta, st.epoch,
                           {"val": report.to_dict() if report else None})
        finally:
            if log_fh:
                log_fh.close()
        return TrainResult(st, best[2], best[1], float(best[0]), report)


def seeds_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _check_finite(value: float, what: str, epoch: int):
    if not np.isfinite(value):
        raise NumericalError(f"{what} became {value} at epoch {epoch}")


def train(cfg: TrainConfig, split: DatasetSplit, out_dir=None, on_step=None, on_epoch=None) -> TrainResult:
    return Trainer(cfg, split, out_dir, on_step, on_epoch).run()

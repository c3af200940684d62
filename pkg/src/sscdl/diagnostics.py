"""Built-in self checks on tiny problems.

Each check returns a :class:`CheckResult`.  They back the ``check`` command
and the acceptance tests:

* confidence-distribution invariants over the full (s, sigma) grid,
* finite-difference checks of the primitive ops and every training loss,
* the meta-gradient against finite differences of the one-step objective,
* tail ranking and its metrics against a brute-force sort.
"""
from __future__ import annotations

import functools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import confdist
from .config import TrainConfig
from .confdist import ConfidenceGrid
from .dataset import KnownTriples, corrupt
from .diffcore import (Tensor, enable_grad, finite_diff_check, grad, no_grad, numeric_gradient, ops, outer_value,
                       relative_error)
from .evaluation import rank_tails, ranking_metrics
from .losses import (LabeledBatch, LossSettings, combined_loss, loss_cp, loss_lp, meta_gradient,
                     pseudo_from_generator, total_loss)
from .model import ModelParams, init_params, rank_logits_concat
from .toy import make_toy_split, make_toy_ukg
from .trainer import Trainer

GRAD_TOL = 1e-4
META_TOL = 1e-3
SIGMAS = (0.02, 0.2, 0.6, 1.0, 2.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_rel_error: Optional[float] = None
    detail: str = ""
    seconds: float = 0.0
    parts: dict = field(default_factory=dict)

    def line(self) -> str:
        err = "" if self.max_rel_error is None else f" max_rel_error={self.max_rel_error:.3e}"
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}{err} ({self.seconds:.2f}s) {self.detail}".rstrip()


def _timed(fn):
    @functools.wraps(fn)
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    return wrapper


# tiny problem ---------------------------------------------------------------

@dataclass
class TinyProblem:
    theta: dict
    eta: dict
    labeled: LabeledBatch
    negatives: np.ndarray
    unlabeled: np.ndarray
    settings: LossSettings
    grid: ConfidenceGrid


def tiny_problem(seed: int = 0, n_entities: int = 5, n_relations: int = 2, dim: int = 4, n_quads: int = 12,
                 k_neg: int = 3, sigma: float = 0.6, w_p: float = 0.7) -> TinyProblem:
    """A 5-entity / 2-relation / d=4 graph with float64 learner and generator."""
    quads, vocab = make_toy_ukg(n_entities, n_relations, n_quads, latent=2, seed=seed)
    known = KnownTriples(quads.triples, n_entities, n_relations)
    rng = np.random.default_rng(seed + 1)
    grid = ConfidenceGrid(100)
    theta = init_params(n_entities, n_relations, dim, seed + 2, dtype=np.float64).arrays
    eta = init_params(n_entities, n_relations, dim, seed + 3, dtype=np.float64).arrays
    # nonzero uncertainty weights so their gradients are not a special case
    theta["u_cp"] = np.asarray(0.3)
    theta["u_lp"] = np.asarray(-0.2)
    labeled = LabeledBatch.build(quads, sigma, grid)
    negatives = corrupt(quads.triples, k_neg, n_entities, known, rng)
    unlabeled = corrupt(quads.triples, 1, n_entities, known, rng)[:, 0]
    settings = LossSettings(beta=1.0, gamma=0.1, phi=0.1, w_p=w_p, grid=grid)
    return TinyProblem(theta, eta, labeled, negatives, unlabeled, settings, grid)


# distribution invariants ----------------------------------------------------

@_timed
def check_distribution_invariants(sigmas=SIGMAS, n: int = 100, tol: float = 1e-9) -> CheckResult:
    """Sum-to-one and nearest-label peak for s in {0, 1/n, ..., 1}."""
    grid = ConfidenceGrid(n)
    s = grid.labels
    worst, bad = 0.0, []
    for sigma in sigmas:
        d = confdist.discretize(s, sigma, grid)
        dev = float(np.max(np.abs(d.sum(axis=1) - 1.0)))
        worst = max(worst, dev)
        peaks = np.argmax(d, axis=1)
        wrong = np.nonzero(peaks != grid.nearest_index(s))[0]
        if dev > tol or len(wrong):
            bad.append(f"sigma={sigma}: sum dev {dev:.2e}, {len(wrong)} misplaced peaks")
    return CheckResult("distribution invariants", not bad, None,
                       "; ".join(bad) or f"{len(s) * len(sigmas)} cases, worst sum dev {worst:.1e}")


# gradient checks ------------------------------------------------------------

def _op_cases():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    w = rng.normal(size=(4, 2))
    idx = np.array([0, 2, 2, 1])
    return {
        "mul": ({"a": x, "b": pos}, lambda P: ops.sum(ops.mul(P["a"], P["b"]))),
        "div": ({"a": x, "b": pos}, lambda P: ops.sum(ops.div(P["a"], P["b"]))),
        "exp": ({"a": x}, lambda P: ops.sum(ops.exp(P["a"]))),
        "log": ({"a": pos}, lambda P: ops.sum(ops.log(P["a"]))),
        "sigmoid": ({"a": x}, lambda P: ops.sum(ops.mul(ops.sigmoid(P["a"]), Tensor(x)))),
        "softmax": ({"a": x}, lambda P: ops.sum(ops.mul(ops.softmax(P["a"]), Tensor(x)))),
        "log_softmax": ({"a": x}, lambda P: ops.sum(ops.mul(ops.log_softmax(P["a"]), Tensor(pos)))),
        "square": ({"a": x}, lambda P: ops.sum(ops.square(P["a"]))),
        "matmul": ({"a": x, "w": w}, lambda P: ops.sum(ops.square(ops.matmul(P["a"], P["w"])))),
        "gather": ({"a": x}, lambda P: ops.sum(ops.square(ops.gather(P["a"], idx[:3])))),
        "concat": ({"a": x, "b": pos},
                   lambda P: ops.sum(ops.mul(ops.concat([P["a"], P["b"]], axis=1), Tensor(np.tile(x, 2))))),
        "second_order": ({"a": x}, _second_order_case),
    }


def _second_order_case(P):
    # gradient norm of sum(sigmoid(a)^3) built with create_graph=True
    # the finite-difference side runs under no_grad, so re-enable recording here
    with enable_grad():
        a = P["a"] if P["a"].requires_grad else Tensor(P["a"].data, requires_grad=True)
        y = ops.sum(ops.mul(ops.square(ops.sigmoid(a)), ops.sigmoid(a)))
        (g,) = grad(y, [a], create_graph=True)
        return ops.sum(ops.square(g))


@_timed
def check_op_gradients(cases: Optional[dict] = None, tol: float = GRAD_TOL) -> CheckResult:
    """Finite-difference checks of primitive ops, including a double backward.

    ``cases`` maps a name to ``(params, loss_builder)``; a broken op passed in
    here is reported by name.
    """
    cases = _op_cases() if cases is None else cases
    parts, failed = {}, []
    for name, (params, builder) in cases.items():
        rep = finite_diff_check(builder, params, tolerance=tol, name=name)
        parts[name] = rep.max_rel_error
        if not rep.passed:
            failed.append(name)
    worst = max(parts.values()) if parts else 0.0
    detail = ("failed: " + ", ".join(failed)) if failed else f"{len(parts)} ops"
    return CheckResult("op gradients", not failed, worst, detail, parts=parts)


def loss_gradient_cases(prob: TinyProblem) -> dict:
    """Builders over a flat dict: theta keys, plus ``eta/``-prefixed keys."""
    s = prob.settings

    def split(P):
        return ({k: v for k, v in P.items() if not k.startswith("eta/")},
                {k[4:]: v for k, v in P.items() if k.startswith("eta/")})

    def cp(P):
        return loss_cp(P, prob.labeled, s.beta, s.grid)

    def lp(P):
        return loss_lp(P, prob.labeled, prob.negatives, s.gamma)

    def combined(P):
        return combined_loss(loss_cp(P, prob.labeled, s.beta, s.grid),
                             loss_lp(P, prob.labeled, prob.negatives, s.gamma), P["u_cp"], P["u_lp"], s.phi)

    def with_pseudo(P):
        T, E = split(P)
        return total_loss(T, prob.labeled, prob.negatives, s, pseudo_from_generator(E, prob.unlabeled, s.grid))

    both = {**prob.theta, **{f"eta/{k}": v for k, v in prob.eta.items()}}
    return {
        "confidence loss (KL + beta MSE)": (prob.theta, cp),
        "margin ranking loss": (prob.theta, lp),
        "uncertainty-weighted loss": (prob.theta, combined),
        "loss with pseudo labels (learner and generator)": (both, with_pseudo),
    }


@_timed
def check_loss_gradients(prob: Optional[TinyProblem] = None, tol: float = GRAD_TOL) -> CheckResult:
    prob = prob or tiny_problem()
    res = check_op_gradients(loss_gradient_cases(prob), tol)
    res.name = "loss gradients"
    res.detail = res.detail.replace("ops", "losses")
    return res


@_timed
def check_meta_gradient(prob: Optional[TinyProblem] = None, alpha: float = 0.5, tol: float = META_TOL,
                        step: float = 1e-5) -> CheckResult:
    """Exact meta-gradient vs central differences, plus the two zero cases."""
    prob = prob or tiny_problem()
    s = prob.settings

    def inner(T, E):
        return total_loss(T, prob.labeled, prob.negatives, s, pseudo_from_generator(E, prob.unlabeled, s.grid))

    def outer(T):
        return total_loss(T, prob.labeled, prob.negatives, s)

    analytic, _ = meta_gradient(prob.eta, prob.theta, prob.labeled, prob.negatives, prob.unlabeled, alpha, s)
    numeric = numeric_gradient(lambda E: outer_value(outer, inner, prob.theta, E, alpha), prob.eta, step=step)
    parts = {k: relative_error(analytic[k], numeric[k]) for k in prob.eta}
    # relative to the largest entry over all arrays, so tiny blocks do not dominate
    worst = relative_error(np.concatenate([analytic[k].ravel() for k in prob.eta]),
                           np.concatenate([numeric[k].ravel() for k in prob.eta]))
    msgs = []
    ok = worst <= tol
    zero_alpha, _ = meta_gradient(prob.eta, prob.theta, prob.labeled, prob.negatives, prob.unlabeled, 0.0, s)
    if any(np.any(g) for g in zero_alpha.values()):
        ok = False
        msgs.append("alpha=0 gave a nonzero gradient")
    s0 = LossSettings(s.beta, s.gamma, s.phi, 0.0, s.normalize, s.grid)
    zero_wp, _ = meta_gradient(prob.eta, prob.theta, prob.labeled, prob.negatives, prob.unlabeled, alpha, s0)
    if any(np.any(g) for g in zero_wp.values()):
        ok = False
        msgs.append("w_p=0 gave a nonzero gradient")
    return CheckResult("meta-gradient", ok, worst, "; ".join(msgs) or "alpha=0 and w_p=0 give exact zeros",
                       parts=parts)


# ranking oracle -------------------------------------------------------------

def brute_force_ranks(params: ModelParams, queries: np.ndarray, known_set: set, filtered: bool = True) -> list:
    """Enumerate every candidate tail, score it, sort by (-score, index)."""
    n_e = params.n_entities
    P = params.constants()
    out = []
    for h, r, t in np.asarray(queries).tolist():
        cands = np.array([[h, r, e] for e in range(n_e)])
        with no_grad():
            scores = rank_logits_concat(P, cands).data.tolist()
        pool = [e for e in range(n_e) if e == t or not filtered or (h, r, e) not in known_set]
        pool.sort(key=lambda e: (-scores[e], e))
        out.append(pool.index(t) + 1)
    return out


def brute_force_metrics(ranks, weights) -> tuple:
    recip = [w / r for w, r in zip(weights, ranks)]
    hits = sum(1 for r in ranks if r == 1)
    return math.fsum(recip) / math.fsum(weights), hits / len(ranks)


def random_ranking_case(rng: np.random.Generator, max_entities: int = 50):
    n_e = int(rng.integers(5, max_entities + 1))
    n_r = int(rng.integers(1, 5))
    n_q = int(rng.integers(n_e, 4 * n_e))
    quads, vocab = make_toy_ukg(n_e, n_r, min(n_q, n_e * n_e * n_r // 2), latent=3, seed=int(rng.integers(1 << 31)))
    params = init_params(n_e, n_r, int(rng.integers(2, 9)), int(rng.integers(1 << 31)), dtype=np.float64)
    if rng.random() < 0.5:
        # duplicated entity rows produce exact score ties
        ent = params.arrays["ent"]
        dup = rng.choice(n_e, size=2, replace=False)
        ent[dup[1]] = ent[dup[0]]
    return quads, params


@_timed
def check_ranking_oracle(n_queries: int = 1000, seed: int = 0, max_entities: int = 50) -> CheckResult:
    rng = np.random.default_rng(seed)
    done, mismatches, cases = 0, [], 0
    while done < n_queries:
        quads, params = random_ranking_case(rng, max_entities)
        cases += 1
        known = KnownTriples(quads.triples, params.n_entities, params.n_relations)
        known_set = set(map(tuple, quads.triples.tolist()))
        take = rng.choice(len(quads), size=min(len(quads), n_queries - done, 60), replace=False)
        q = quads[np.sort(take)]
        for filtered in (True, False):
            got = rank_tails(params, q.triples, known, filtered=filtered).tolist()
            want = brute_force_ranks(params, q.triples, known_set, filtered=filtered)
            if got != want:
                mismatches.append(f"case {cases} filtered={filtered}: ranks differ")
            if ranking_metrics(got, q.confidence) != brute_force_metrics(want, q.confidence.tolist()):
                mismatches.append(f"case {cases} filtered={filtered}: metrics differ")
        done += len(q)
    return CheckResult("ranking oracle", not mismatches, None,
                       "; ".join(mismatches[:5]) or f"{done} queries over {cases} graphs, exact match")



class _InstrumentedTrainer(Trainer):
    """Records how much the pseudo items move the learner's gradient."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.pseudo_effect = []  # (epoch, max |grad with - grad without|)
        self.eta_snapshots = []

    def learner_loss(self, T, labeled, negatives, pseudo):
        loss = super().learner_loss(T, labeled, negatives, pseudo)
        names = list(T)
        with_p = grad(loss, [T[k] for k in names])
        bare = super().learner_loss(T, labeled, negatives, None)
        without = grad(bare, [T[k] for k in names])
        diff = max(float(np.max(np.abs(a.data - b.data))) for a, b in zip(with_p, without))
        self.pseudo_effect.append((self.state.epoch + 1, diff))
        return loss


def phase_contract_split():
    return make_toy_split(seed=11, n_entities=40, n_relations=3, n_quads=400)


@_timed
def check_phase_contract(split=None) -> CheckResult:
    """Generator frozen before t_pcdg, no pseudo gradient before t_cdlrl, and
    boundaries past t_max reproducing the no_mst ablation bit for bit."""
    split = split or phase_contract_split()
    cfg = TrainConfig(dim=6, batch_size=64, k_neg=4, t_max=6, t_pcdg=3, t_cdlrl=5, eval_every=3, alpha=0.01,
                      threshold=0.0, dtype="float64").validate()
    tr = _InstrumentedTrainer(cfg, split)
    eta0 = {k: v.copy() for k, v in tr.state.eta.arrays.items()}
    tr.on_epoch = lambda st: tr.eta_snapshots.append({k: v.copy() for k, v in st.eta.arrays.items()})
    tr.run()
    problems = []
    for epoch, snap in enumerate(tr.eta_snapshots, start=1):
        same = all(np.array_equal(snap[k], eta0[k]) for k in eta0)
        if epoch < cfg.t_pcdg and not same:
            problems.append(f"generator changed in warm-up epoch {epoch}")
        if epoch == cfg.t_pcdg and same:
            problems.append("generator not updated once meta warm-up started")
    early = [d for e, d in tr.pseudo_effect if e < cfg.t_cdlrl]
    late = [d for e, d in tr.pseudo_effect if e >= cfg.t_cdlrl]
    if any(d != 0.0 for d in early):
        problems.append(f"pseudo items reached the learner before t_cdlrl (max {max(early):.3g})")
    if not late or max(late) == 0.0:
        problems.append("pseudo items never reached the learner in the full phase")

    past = Trainer(cfg.replace(t_pcdg=cfg.t_max + 1, t_cdlrl=cfg.t_max + 1), split).run()
    ablated = Trainer(cfg.replace(ablation="no_mst"), split).run()
    if not all(np.array_equal(v, ablated.state.theta.arrays[k]) for k, v in past.state.theta.arrays.items()):
        problems.append("boundaries past t_max differ from no_mst")
    return CheckResult("phase contract", not problems, None,
                       "; ".join(problems) or f"{len(early)} steps checked before t_cdlrl, "
                                               f"max pseudo effect after {max(late):.3g}")

# runner ---------------------------------------------------------------------

DEFAULT_CHECKS: dict = {
    "distribution invariants": check_distribution_invariants,
    "op gradients": check_op_gradients,
    "loss gradients": check_loss_gradients,
    "meta-gradient": check_meta_gradient,
    "ranking oracle": check_ranking_oracle,
    "phase contract": check_phase_contract,
}


def run_checks(checks: Optional[dict] = None, echo: Optional[Callable[[str], None]] = None) -> list:
    results = []
    for name, fn in (checks or DEFAULT_CHECKS).items():
        try:
            res = fn()
        except Exception as exc:  # a crashing check is a failed check
            res = CheckResult(name, False, None, f"raised {type(exc).__name__}: {exc}")
        results.append(res)
        if echo:
            echo(res.line())
    return results


def check_report(results: list) -> dict:
    errs = [r.max_rel_error for r in results if r.max_rel_error is not None]
    return {
        "passed": all(r.passed for r in results),
        "max_rel_gradient_error": max(errs) if errs else None,
        "checks": [asdict(r) for r in results],
    }


def write_check_report(path, results: list) -> dict:
    rep = check_report(results)
    Path(path).write_text(json.dumps(rep, indent=2) + "\n")
    return rep

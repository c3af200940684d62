"""Confidence-prediction and tail-ranking metrics.

Ranking protocol: every entity is scored as the tail of ``(h, r, ?)`` with the
rank head.  In filtered mode, other tails forming a known triple with
``(h, r)`` are removed first.  Ties are broken by ascending entity index, so
``rank = 1 + #{strictly higher} + #{equal score and lower index}``.  Scores
are compared as pre-sigmoid logits, which orders candidates exactly as the
sigmoid scores do while avoiding saturation ties in low precision.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .confdist import DEFAULT_GRID, ConfidenceGrid
from .dataset import KnownTriples, QuadrupleSet
from .model import ModelParams, TailScorer, predict_confidence


class RankResult(NamedTuple):
    head: int
    relation: int
    tail: int
    rank: int
    confidence: float


@dataclass
class MetricReport:
    mse: Optional[float] = None
    mae: Optional[float] = None
    wmrr: Optional[float] = None
    hits1: Optional[float] = None
    count: int = 0
    subset: str = "all"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hits@1"] = d.pop("hits1")
        return d


def confidence_errors(predicted, truth) -> tuple:
    """``(mse, mae)`` between two confidence vectors."""
    err = np.asarray(predicted, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    if not err.size:
        raise ValueError("no items to evaluate")
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


def confidence_metrics(params: ModelParams, quads: QuadrupleSet, grid: ConfidenceGrid = DEFAULT_GRID) -> tuple:
    return confidence_errors(predict_confidence(params, quads.triples, grid), quads.confidence)


def rank_from_scores(scores: np.ndarray, gold: int, exclude: Optional[np.ndarray] = None) -> int:
    """Rank of ``gold`` among ``scores`` with optional excluded candidates."""
    g = scores[gold]
    better = scores > g
    tie_lower = scores == g
    tie_lower[gold:] = False
    hit = better | tie_lower
    if exclude is not None and len(exclude):
        ex = np.asarray(exclude)
        ex = ex[ex != gold]
        hit[ex] = False
    return int(hit.sum()) + 1


def rank_tails(params: ModelParams, queries: np.ndarray, known: Optional[KnownTriples] = None,
               filtered: bool = True, scorer: Optional[TailScorer] = None, chunk: int = 256) -> np.ndarray:
    """Ranks of the gold tails for ``(h, r, t)`` rows of ``queries``."""
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 3)
    if filtered and known is None:
        raise ValueError("filtered ranking needs the known-triple index")
    scorer = scorer or TailScorer(params)
    ranks = np.empty(len(queries), dtype=np.int64)
    for i in range(0, len(queries), chunk):
        q = queries[i:i + chunk]
        scores = scorer.logits(q[:, 0], q[:, 1])
        for j, (h, r, t) in enumerate(q.tolist()):
            exclude = known.tails_of(h, r) if filtered else None
            ranks[i + j] = rank_from_scores(scores[j], t, exclude)
    return ranks


def rank_results(params, quads: QuadrupleSet, known=None, filtered=True) -> list:
    ranks = rank_tails(params, quads.triples, known, filtered)
    return [RankResult(h, r, t, int(k), s) for (h, r, t), k, s in
            zip(quads.triples.tolist(), ranks.tolist(), quads.confidence.tolist())]


def ranking_metrics(ranks, weights) -> tuple:
    """``(wmrr, hits1)``: confidence-weighted mean reciprocal rank, unweighted Hits@1."""
    ranks = np.asarray(ranks, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if not ranks.size:
        raise ValueError("no ranking queries")
    if np.any(ranks < 1):
        raise ValueError("ranks must be >= 1")
    # fsum is correctly rounded, so the result does not depend on summation order
    total = math.fsum(weights.tolist())
    wmrr = math.fsum((weights / ranks).tolist()) / total if total > 0 else float("nan")
    return wmrr, float(np.mean(ranks == 1))


def evaluate(params: ModelParams, quads: QuadrupleSet, known: Optional[KnownTriples] = None,
             grid: ConfidenceGrid = DEFAULT_GRID, filtered: bool = True, ranking: bool = True) -> MetricReport:
    mse, mae = confidence_metrics(params, quads, grid)
    report = MetricReport(mse=mse, mae=mae, count=len(quads))
    if ranking:
        ranks = rank_tails(params, quads.triples, known, filtered)
        report.wmrr, report.hits1 = ranking_metrics(ranks, quads.confidence)
    return report


def low_confidence_analysis(params: ModelParams, quads: QuadrupleSet, cutoff: float = 0.5,
                            grid: ConfidenceGrid = DEFAULT_GRID) -> MetricReport:
    """MAE/MSE on items with confidence strictly below ``cutoff``.

    An empty subset gives a report with ``count == 0`` and ``mae is None``.
    """
    sub = quads[quads.confidence < cutoff]
    report = MetricReport(count=len(sub), subset="low-confidence")
    if len(sub):
        report.mse, report.mae = confidence_metrics(params, sub, grid)
    return report


def write_reports_json(path, reports: dict) -> None:
    Path(path).write_text(json.dumps({k: r.to_dict() for k, r in reports.items()}, indent=2) + "\n")


def write_reports_csv(path, reports: dict) -> None:
    cols = ["split", "subset", "count", "mse", "mae", "wmrr", "hits@1"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for name, r in reports.items():
            d = r.to_dict()
            w.writerow([name] + ["" if d[c] is None else d[c] for c in cols[1:]])


def write_rank_dump(path, results: list) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RankResult._fields)
        w.writerows(results)

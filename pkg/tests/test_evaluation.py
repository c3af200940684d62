import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sscdl.dataset import KnownTriples, QuadrupleSet
from sscdl.diagnostics import brute_force_metrics, brute_force_ranks, random_ranking_case
from sscdl.evaluation import (MetricReport, confidence_errors, confidence_metrics, evaluate, low_confidence_analysis,
                              rank_from_scores, rank_results, rank_tails, ranking_metrics, write_rank_dump,
                              write_reports_csv, write_reports_json)
from sscdl.model import TailScorer, init_params, predict_confidence
from sscdl.toy import make_toy_ukg


def test_confidence_error_examples():
    assert confidence_errors([0.2, 0.7], [0.2, 0.7]) == (0.0, 0.0)
    mse, mae = confidence_errors([0.6, 0.4], [0.5, 0.5])
    assert mse == pytest.approx(0.01) and mae == pytest.approx(0.1)
    with pytest.raises(ValueError):
        confidence_errors([], [])


def test_uniform_model_mse_is_distance_to_half():
    q, _ = make_toy_ukg(30, 3, 200, seed=2)
    p = init_params(30, 3, 4, seed=0, zero_output=True)
    mse, mae = confidence_metrics(p, q)
    assert mse == pytest.approx(float(np.mean((0.5 - q.confidence) ** 2)), rel=1e-9)
    assert mae == pytest.approx(float(np.mean(np.abs(0.5 - q.confidence))), rel=1e-9)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=50))
def test_jensen(pairs):
    mse, mae = confidence_errors([a for a, _ in pairs], [b for _, b in pairs])
    assert mae * mae <= mse + 1e-12


def test_rank_from_scores_rules():
    s = np.array([0.1, 0.9, 0.5, 0.9, 0.2])
    assert rank_from_scores(s, 1) == 1
    assert rank_from_scores(s, 3) == 2  # tie with lower index 1 ranks ahead
    assert rank_from_scores(s, 2) == 3
    assert rank_from_scores(s, 2, exclude=np.array([1, 2])) == 2  # gold itself is never excluded
    assert rank_from_scores(np.array([0.3, 0.95, 0.2]), 1) == 1


def test_filtered_drops_exactly_one_known_competitor():
    scores = np.array([0.2, 0.8, 0.5, 0.1])
    raw = rank_from_scores(scores, 2)
    assert rank_from_scores(scores, 2, exclude=np.array([1])) == raw - 1


def test_ranking_metric_examples():
    assert ranking_metrics([1, 1, 1], [0.3, 0.2, 1.0]) == (1.0, 1.0)
    wmrr, hits = ranking_metrics([1, 2], [1.0, 0.5])
    assert wmrr == pytest.approx(0.8333333333333334, abs=1e-15) and hits == 0.5
    ranks = [1, 3, 4, 2]
    assert ranking_metrics(ranks, [0.7] * 4)[0] == pytest.approx(np.mean([1 / r for r in ranks]), rel=1e-15)
    with pytest.raises(ValueError):
        ranking_metrics([0], [1.0])


@given(st.lists(st.integers(1, 60), min_size=1, max_size=40))
def test_hits_at_most_wmrr_with_equal_weights(ranks):
    wmrr, hits = ranking_metrics(ranks, [1.0] * len(ranks))
    assert 0 <= hits <= wmrr <= 1


def test_hits_can_exceed_confidence_weighted_wmrr():
    # weighting breaks the equal-weight bound: the rank-1 query carries little weight
    wmrr, hits = ranking_metrics([1, 100], [0.1, 1.0])
    assert hits == 0.5 and wmrr < hits


def test_five_entity_graph_matches_exhaustive_oracle():
    q, _ = make_toy_ukg(5, 2, 20, seed=1)
    p = init_params(5, 2, 3, seed=2)
    known = KnownTriples(q.triples, 5, 2)
    known_set = set(map(tuple, q.triples.tolist()))
    for filtered in (True, False):
        assert rank_tails(p, q.triples, known, filtered).tolist() == brute_force_ranks(p, q.triples, known_set,
                                                                                       filtered)


@pytest.mark.parametrize("seed", range(8))
def test_random_graphs_match_oracle(seed):
    rng = np.random.default_rng(seed)
    q, p = random_ranking_case(rng)
    known = KnownTriples(q.triples, p.n_entities, p.n_relations)
    known_set = set(map(tuple, q.triples.tolist()))
    got = rank_tails(p, q.triples, known, chunk=7)
    want = brute_force_ranks(p, q.triples, known_set)
    assert got.tolist() == want
    assert ranking_metrics(got, q.confidence) == brute_force_metrics(want, q.confidence.tolist())


def test_metrics_invariant_under_monotone_score_transform():
    q, _ = make_toy_ukg(25, 2, 80, seed=4)
    p = init_params(25, 2, 4, seed=3)
    known = KnownTriples(q.triples, 25, 2)

    class Cubed(TailScorer):
        def logits(self, heads, relations, budget=1 << 24):
            return np.tanh(super().logits(heads, relations, budget)) * 3 + 1  # strictly increasing map

    a = rank_tails(p, q.triples, known)
    b = rank_tails(p, q.triples, known, scorer=Cubed(p))
    assert ranking_metrics(a, q.confidence) == ranking_metrics(b, q.confidence)


def test_rank_tails_requires_index_when_filtered():
    p = init_params(5, 1, 2, seed=0)
    with pytest.raises(ValueError):
        rank_tails(p, np.array([[0, 0, 1]]), None, filtered=True)
    assert rank_tails(p, np.array([[0, 0, 1]]), None, filtered=False)[0] >= 1


def test_low_confidence_subset():
    p = init_params(5, 1, 2, seed=0, zero_output=True)  # predicts 0.5 everywhere
    high = QuadrupleSet(np.array([[0, 0, 1], [1, 0, 2]]), np.array([0.9, 0.5]))
    rep = low_confidence_analysis(p, high)
    assert rep.count == 0 and rep.mae is None and rep.subset == "low-confidence"
    one = QuadrupleSet(np.array([[0, 0, 1], [1, 0, 2]]), np.array([0.3, 0.8]))
    rep = low_confidence_analysis(p, one)
    assert rep.count == 1 and rep.mae == pytest.approx(0.2)


def test_evaluate_and_writers(tmp_path):
    q, _ = make_toy_ukg(20, 2, 60, seed=6)
    p = init_params(20, 2, 4, seed=1)
    known = KnownTriples(q.triples, 20, 2)
    rep = evaluate(p, q, known)
    assert rep.count == 60 and 0 < rep.hits1 <= 1 and rep.wmrr <= 1
    assert rep.mse == pytest.approx(float(np.mean((predict_confidence(p, q.triples) - q.confidence) ** 2)))
    assert evaluate(p, q, known, ranking=False).wmrr is None
    reports = {"test": rep, "test/low-confidence": low_confidence_analysis(p, q)}
    write_reports_json(tmp_path / "r.json", reports)
    data = json.loads((tmp_path / "r.json").read_text())
    assert set(data["test"]) >= {"mse", "mae", "wmrr", "hits@1", "count", "subset"}
    write_reports_csv(tmp_path / "r.csv", reports)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "split,subset,count,mse,mae,wmrr,hits@1" and len(lines) == 3
    write_rank_dump(tmp_path / "ranks.csv", rank_results(p, q, known))
    dump = (tmp_path / "ranks.csv").read_text().splitlines()
    assert dump[0] == "head,relation,tail,rank,confidence" and len(dump) == 61


def test_metric_report_dict_keys():
    d = MetricReport(mse=0.1, hits1=0.5).to_dict()
    assert d["hits@1"] == 0.5 and "hits1" not in d

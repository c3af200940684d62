import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sscdl import confdist
from sscdl.confdist import ConfidenceGrid, discretize, expectation, kl_divergence, max_degree

GRID = ConfidenceGrid(100)
SIGMAS = (0.02, 0.2, 0.6, 1.0, 2.0)


def gaussian_oracle(s, sigma, n=100):
    # plain python summation, no shared code with the library
    w = [math.exp(-((i / n - s) ** 2) / (2 * sigma * sigma)) for i in range(n + 1)]
    z = math.fsum(w)
    return [x / z for x in w]


def test_grid_labels():
    assert GRID.size == 101
    assert GRID.labels[0] == 0.0 and GRID.labels[-1] == 1.0
    assert GRID.labels[78] == pytest.approx(0.78)
    with pytest.raises(ValueError):
        ConfidenceGrid(0)


def test_symmetric_around_half():
    d = discretize(0.5, 0.6, GRID)
    assert np.argmax(d) == 50
    for k in range(51):
        assert d[50 - k] == pytest.approx(d[50 + k], rel=1e-12)
    assert abs(d.sum() - 1) < 1e-12


def test_peak_at_078():
    d = discretize(0.78, 0.6, GRID)
    assert int(np.argmax(d)) == 78
    # unimodal: increasing then decreasing
    assert np.all(np.diff(d[:79]) > 0) and np.all(np.diff(d[78:]) < 0)


def test_degree_zero_matches_direct_summation():
    want = 1.0 / math.fsum(math.exp(-((i / 100) ** 2) / (2 * 0.0004)) for i in range(101))
    d = discretize(0.0, 0.02, GRID)
    assert d[0] == pytest.approx(want, rel=1e-12)
    assert np.allclose(d, gaussian_oracle(0.0, 0.02), rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("sigma", SIGMAS)
def test_matches_oracle_on_grid(sigma):
    for s in (0.0, 0.13, 0.5, 0.78, 1.0):
        assert np.allclose(discretize(s, sigma, GRID), gaussian_oracle(s, sigma), rtol=1e-10, atol=1e-300)


def test_vectorized_rows_match_scalar_calls():
    s = np.array([0.0, 0.3, 0.99])
    rows = discretize(s, 0.2, GRID)
    assert rows.shape == (3, 101)
    for i, v in enumerate(s):
        assert np.array_equal(rows[i], discretize(v, 0.2, GRID))


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_rejects_nonpositive_sigma(bad):
    with pytest.raises(ValueError):
        discretize(0.5, bad, GRID)


@pytest.mark.parametrize("s", [-0.01, 1.01, float("nan")])
def test_rejects_confidence_outside_unit_interval(s):
    with pytest.raises(ValueError):
        discretize(s, 0.6, GRID)


def test_tiny_sigma_far_from_grid_stays_finite():
    # every density underflows without the max shift
    d = discretize(0.005, 1e-4, GRID)
    assert np.all(np.isfinite(d)) and abs(d.sum() - 1) < 1e-12
    assert max_degree(d)[0] == 0  # exactly halfway: lower index wins


def test_nearest_index_halfway_goes_down():
    assert GRID.nearest_index(0.005) == 0
    assert GRID.nearest_index(0.015) == 1
    assert GRID.nearest_index(0.0151) == 2
    assert GRID.nearest_index(1.0) == 100


@given(st.floats(0, 1), st.sampled_from(SIGMAS))
def test_normalized_and_peaked(s, sigma):
    d = discretize(s, sigma, GRID)
    assert abs(d.sum() - 1) < 1e-9
    assert np.all(d >= 0)
    assert int(np.argmax(d)) == GRID.nearest_index(s)


@given(st.floats(0, 1), st.floats(0.01, 3.0), st.floats(0.01, 3.0))
def test_monotone_spread(s, a, b):
    lo, hi = min(a, b), max(a, b)
    assert max_degree(discretize(s, lo, GRID))[1] >= max_degree(discretize(s, hi, GRID))[1] - 1e-15


@given(st.integers(0, 100), st.floats(-0.4, 0.4))
def test_expectation_limit_small_sigma(i, off):
    # away from midpoints between labels, where the limit is the midpoint itself
    s = min(1.0, max(0.0, (i + off) / 100))
    e = expectation(discretize(s, 1e-3, GRID), GRID)
    assert abs(e - GRID.labels[GRID.nearest_index(s)]) < 1e-6


def test_expectation_examples():
    assert expectation(confdist.one_hot(0.78, GRID), GRID) == pytest.approx(0.78)
    assert expectation(np.full(101, 1 / 101), GRID) == pytest.approx(0.5)
    d = np.zeros(101)
    d[0] = d[100] = 0.5
    assert expectation(d, GRID) == pytest.approx(0.5)


def test_kl_examples():
    p = discretize(0.3, 0.2, GRID)
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)
    oh = confdist.one_hot(0.42, GRID)
    assert kl_divergence(oh, p) == pytest.approx(-math.log(p[42]), rel=1e-12)


def test_kl_matches_direct_summation():
    t, q = gaussian_oracle(0.5, 0.6), gaussian_oracle(0.6, 0.6)
    want = math.fsum(a * math.log(a / b) for a, b in zip(t, q) if a > 0)
    got = kl_divergence(discretize(0.5, 0.6, GRID), discretize(0.6, 0.6, GRID))
    assert want > 0
    assert got == pytest.approx(want, rel=1e-9)


def test_kl_clamps_zero_predictions():
    t = np.zeros(101)
    t[5] = 1.0
    q = np.zeros(101)
    q[6] = 1.0
    assert kl_divergence(t, q) == pytest.approx(-math.log(1e-12))


@given(st.floats(0, 1), st.floats(0, 1), st.sampled_from(SIGMAS))
def test_kl_nonnegative(a, b, sigma):
    assert kl_divergence(discretize(a, sigma, GRID), discretize(b, sigma, GRID)) >= -1e-12


def test_max_degree_examples():
    assert max_degree(confdist.one_hot(0.03, GRID)) == (3, 1.0)
    idx, deg = max_degree(np.full(101, 1 / 101))
    assert idx == 0 and deg == pytest.approx(0.00990, abs=1e-5)
    d = discretize(0.78, 0.6, GRID)
    idx, deg = max_degree(d)
    assert idx == 78 and deg == pytest.approx(max(gaussian_oracle(0.78, 0.6)), rel=1e-12)


def test_csv_row_roundtrip():
    d = discretize(0.7, 0.2, GRID)
    back = np.array([float(x) for x in confdist.to_csv_row(d).split(",")])
    assert back.shape == (101,) and np.array_equal(back, d)

import math

import numpy as np
import pytest
from _oracles import (
    crps_quadrature,
    fd_gradient,
    fisher_information,
    normal_cdf_mp,
    normal_quantile_bisect,
)
from hypothesis import given
from hypothesis import strategies as st

from tputboost.exceptions import DataError
from tputboost.prob import (
    NormalParams,
    crps_normal,
    crps_point,
    natural_gradient,
    nll,
    nll_gradient,
    normal_cdf,
    normal_quantile,
)

STD = NormalParams(0.0, 0.0)


def test_nll_values():
    assert nll(STD, 0.0) == pytest.approx(0.9189385332046727, abs=1e-12)
    assert nll(STD, 2.0) == pytest.approx(2.9189385332046727, abs=1e-12)


@given(st.floats(-5, 5), st.floats(-2, 2), st.floats(-5, 5))
def test_nll_minimised_at_y(y, ls, delta):
    assert nll(NormalParams(y, ls), y) <= nll(NormalParams(y + delta, ls), y)


def test_crps_standard_at_centre():
    assert crps_normal(STD, 0.0) == pytest.approx(0.2336949772, abs=1e-9)
    assert crps_normal(STD, 0.0) == pytest.approx(crps_quadrature(0.0, 1.0, 0.0), abs=1e-12)


def test_crps_quadrature_random_triples(rng):
    for _ in range(20):
        mu, sigma, y = rng.uniform(-5, 5), rng.uniform(0.1, 10), rng.uniform(-10, 10)
        got = crps_normal(NormalParams.from_sigma(mu, sigma), y)
        assert abs(got - crps_quadrature(mu, sigma, y)) <= 1e-6


@given(st.floats(-3, 3), st.floats(0.1, 5), st.floats(0.1, 10))
def test_crps_scale_at_centre(mu, sigma, c):
    a = crps_normal(NormalParams.from_sigma(mu, c * sigma), mu)
    b = crps_normal(NormalParams.from_sigma(mu, sigma), mu)
    assert a == pytest.approx(c * b, rel=1e-12)


def test_crps_vanishing_sigma_tends_to_abs_error():
    assert crps_normal(NormalParams.from_sigma(0.0, 1e-6), 1.0) == pytest.approx(1.0, abs=1e-5)


@given(st.floats(-5, 5), st.floats(-3, 3), st.floats(-8, 8))
def test_crps_non_negative(mu, ls, y):
    assert crps_normal(NormalParams(mu, ls), y) >= 0


def test_point_crps_is_abs_error():
    assert crps_point(1.5, 1.5) == 0.0
    assert crps_point(0.0, 1.0) == 1.0
    y = np.array([0.3, -2.0, 5.0])
    pred = np.array([0.1, 1.0, 5.5])
    np.testing.assert_array_equal(crps_point(pred, y), np.abs(y - pred))


def test_cdf_and_quantile_points():
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)


@pytest.mark.parametrize("z", [-8.0, -3.3, -1.0, 0.2, 2.5, 7.0])
def test_cdf_against_mpmath(z):
    assert normal_cdf(z) == pytest.approx(normal_cdf_mp(z), rel=1e-13, abs=1e-300)


@pytest.mark.parametrize("p", [1e-6, 0.01, 0.3, 0.975, 1 - 1e-6])
def test_quantile_against_bisection(p):
    assert normal_quantile(p) == pytest.approx(normal_quantile_bisect(p), abs=1e-9)


@given(st.floats(-30, 30))
def test_cdf_symmetry(z):
    assert abs(normal_cdf(z) + normal_cdf(-z) - 1.0) <= 1e-12


@given(st.integers(1, 2**40 - 1))
def test_quantile_symmetry(k):
    p = k / 2**40  # dyadic, so 1 - p is exact
    assert abs(normal_quantile(p) + normal_quantile(1 - p)) <= 1e-9


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, float("nan")])
def test_quantile_domain(p):
    with pytest.raises(DataError):
        normal_quantile(p)


@given(st.floats(-3, 3), st.floats(0.1, 5))
def test_natural_gradient_cases(mu, sigma):
    p = NormalParams.from_sigma(mu, sigma)
    d_mu, d_ls = natural_gradient(p, mu)
    assert d_mu == 0.0 and d_ls == pytest.approx(0.5)
    d_mu, d_ls = natural_gradient(p, mu + sigma)
    assert d_mu == pytest.approx(-sigma, rel=1e-12) and d_ls == pytest.approx(0.0, abs=1e-12)


def test_natural_gradient_first_component_ignores_sigma():
    a = natural_gradient(NormalParams(1.0, -2.0), 3.0)[0]
    b = natural_gradient(NormalParams(1.0, 2.0), 3.0)[0]
    assert a == b == -2.0


def test_natural_gradient_against_fisher_oracle(rng):
    for _ in range(10):
        mu, ls, y = rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-4, 4)
        expected = np.linalg.solve(fisher_information(mu, ls), fd_gradient(mu, ls, y))
        got = np.array(natural_gradient(NormalParams(mu, ls), y))
        np.testing.assert_allclose(got, expected, rtol=1e-4, atol=1e-7)


def test_ordinary_gradient_matches_finite_differences(rng):
    for _ in range(10):
        mu, ls, y = rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-4, 4)
        got = np.array(nll_gradient(NormalParams(mu, ls), y))
        np.testing.assert_allclose(got, fd_gradient(mu, ls, y), rtol=1e-6, atol=1e-8)


def test_expected_nll_is_minimised_at_truth():
    rng = np.random.default_rng(7)
    y = rng.normal(1.0, 2.0, size=200_000)
    best = min(
        ((m, s) for m in (0.8, 1.0, 1.2) for s in (1.6, 2.0, 2.4)),
        key=lambda ms: float(np.mean(nll(NormalParams.from_sigma(*ms), y))),
    )
    assert best == (1.0, 2.0)


def test_interval_and_clamp():
    p = NormalParams(np.array([0.0, 1.0]), np.array([0.0, 40.0]))
    lo, hi = p.interval(0.95)
    assert lo[0] == pytest.approx(-1.959963984540054) and hi[0] == pytest.approx(1.959963984540054)
    assert p.clamped().log_sigma[1] == 15.0
    assert math.isfinite(float(nll(p.clamped(), np.array([0.0, 1.0]))[1]))

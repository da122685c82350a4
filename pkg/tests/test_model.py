import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drawdown_dividends.exceptions import DomainError, NoRoot, ParameterError, RegimeError
from drawdown_dividends.model import (
    ModelParams,
    Regime,
    barrier_value_derivatives,
    boundary_residual,
    boundary_strategy,
    boundary_value_g,
    boundary_value_g_derivatives,
    classify_regime,
    derive_constants,
    gradient_operator,
    simple_case_value,
)

from conftest import FIGURE1, paper_params

# reference values computed independently with 50-digit arithmetic
FROZEN = {
    "gamma": 1.0540925533894597773,
    "lambda1": 0.36633983786426161001,
    "lambda2": 3.0330065045309282767,
    "k1": 1.5890857985776771328,
    "k2": 0.13776909662819093235,
    "y0": 1.1594784640064429899,
    "theta1": 6.82936282723383849,
    "theta2": 0.1626961605671718233,
    "x_infty": 1.0689561540367483885,
}


def test_constants_match_high_precision_reference(paper):
    _, d = paper
    for name, ref in FROZEN.items():
        assert getattr(d, name) == pytest.approx(ref, rel=1e-13, abs=1e-14), name


def test_g_matches_high_precision_reference(paper):
    p, d = paper
    assert boundary_value_g(p, d, 1.0) == pytest.approx(4.8754358384173436926, rel=1e-13)
    assert boundary_value_g(p, d, 3.0) == pytest.approx(5.863681375103550101, rel=1e-13)


def test_regime_tags():
    assert classify_regime(paper_params()) is Regime.COMPLICATED
    assert classify_regime(ModelParams(b=0.5, **FIGURE1)) is Regime.SIMPLE
    assert str(Regime.SIMPLE) == "Simple"


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(mu=0.3, sigma=0.0, r=0.05, cbar=0.3, b=0.5),
        dict(mu=0.3, sigma=0.3, r=0.0, cbar=0.3, b=0.5),
        dict(mu=0.3, sigma=0.3, r=0.05, cbar=0.4, b=0.5),
        dict(mu=0.3, sigma=0.3, r=0.05, cbar=0.0, b=0.5),
        dict(mu=0.3, sigma=0.3, r=0.05, cbar=0.3, b=1.5),
        dict(mu=0.3, sigma=0.3, r=0.05, cbar=0.3, b=float("nan")),
    ],
)
def test_invalid_params_rejected(kwargs):
    with pytest.raises(ParameterError):
        ModelParams(**kwargs)


valid_params = st.builds(
    lambda mu, frac, sigma, r, b: ModelParams(mu, sigma, r, mu * frac, b),
    mu=st.floats(0.01, 2.0),
    frac=st.floats(0.01, 1.0),
    sigma=st.floats(0.05, 2.0),
    r=st.floats(0.005, 0.5),
    b=st.floats(0.0, 1.0),
)


@settings(max_examples=300, deadline=None)
@given(valid_params)
def test_quadratic_residuals_vanish(p):
    d = derive_constants(p)
    for name, res in d.quadratic_residuals(p).items():
        root = getattr(d, name)
        assert root > 0
        assert abs(res) <= 1e-12 * max(1.0, p.r, p.sigma**2 * root**2), name
    assert d.lambda1 * d.k1 + d.lambda2 * d.k2 == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(valid_params)
def test_regime_predicates_agree(p):
    d = derive_constants(p)
    by_gamma = p.cbar * d.gamma <= p.r
    # both predicates are evaluated in floating point; skip razor-thin ties
    if abs(2 * p.mu * p.cbar - p.sigma**2 * p.r) > 1e-12 * p.sigma**2 * p.r:
        assert by_gamma == (classify_regime(p) is Regime.SIMPLE)


@settings(max_examples=200, deadline=None)
@given(valid_params)
def test_y0_root_and_smooth_fit(p):
    d = derive_constants(p)
    if d.regime is Regime.SIMPLE:
        assert d.y0 is None
        with pytest.raises(NoRoot):
            d.require_y0()
        return
    y0 = d.require_y0()
    assert y0 > 0
    lhs = d.k1 * math.exp(-d.lambda1 * y0) - d.k2 * math.exp(d.lambda2 * y0) + p.b * p.cbar / p.r
    assert abs(lhs) <= 1e-9 * p.cbar / p.r
    _, g1, _ = boundary_value_g_derivatives(p, d, y0)
    assert g1 == pytest.approx(1.0, abs=1e-8)


def test_g_boundary_conditions_and_continuity(paper):
    p, d = paper
    assert boundary_value_g(p, d, 0.0) == pytest.approx(0.0, abs=1e-12)
    y0 = d.y0
    eps = 1e-9
    lo = boundary_value_g_derivatives(p, d, y0 - eps)
    hi = boundary_value_g_derivatives(p, d, y0 + eps)
    assert abs(lo[0] - hi[0]) < 1e-8
    assert abs(lo[1] - hi[1]) < 1e-8
    x = np.linspace(0, 20, 2001)
    g = boundary_value_g(p, d, x)
    assert np.all(np.diff(g) > 0) and g[-1] < p.cbar / p.r


def test_g_solves_the_boundary_ode(paper):
    p, d = paper
    x = np.linspace(0, 15, 3001)
    assert np.max(np.abs(boundary_residual(p, d, x))) < 1e-10


def test_g_derivatives_match_finite_differences(paper):
    p, d = paper
    x = np.array([0.3, 0.9, 2.0, 4.0])
    h = 1e-5
    g, g1, g2 = boundary_value_g_derivatives(p, d, x)
    gp = boundary_value_g(p, d, x + h)
    gm = boundary_value_g(p, d, x - h)
    np.testing.assert_allclose(g1, (gp - gm) / (2 * h), rtol=1e-8)
    np.testing.assert_allclose(g2, (gp - 2 * g + gm) / h**2, rtol=1e-4, atol=1e-5)


def test_negative_x_is_a_domain_error(paper):
    p, d = paper
    with pytest.raises(DomainError):
        boundary_value_g(p, d, -0.1)
    with pytest.raises(DomainError):
        barrier_value_derivatives(p, d, np.array([0.0, -1.0]))


def test_simple_case_value_only_in_simple_regime(paper):
    p, d = paper
    with pytest.raises(RegimeError):
        simple_case_value(p, d, 1.0)
    q = ModelParams(b=0.3, **FIGURE1)
    e = derive_constants(q)
    v = simple_case_value(q, e, np.array([0.0, 1.0, 5.0]), c=0.05)
    np.testing.assert_allclose(v, q.cbar / q.r * (1 - np.exp(-e.gamma * np.array([0, 1, 5.0]))))
    # in the simple regime g coincides with the closed form
    np.testing.assert_allclose(boundary_value_g(q, e, np.array([1.0, 5.0])), v[1:])
    with pytest.raises(DomainError):
        simple_case_value(q, e, 1.0, c=0.2)


def test_barrier_is_continuous_smooth_and_dominates_g(paper):
    p, d = paper
    xi = d.x_infty
    lo = barrier_value_derivatives(p, d, xi - 1e-10)
    hi = barrier_value_derivatives(p, d, xi + 1e-10)
    assert lo[0] == pytest.approx(hi[0], abs=1e-8)
    assert lo[1] == pytest.approx(1.0, abs=1e-8)
    assert lo[2] == pytest.approx(0.0, abs=1e-7)
    assert barrier_value_derivatives(p, d, 0.0)[0] == pytest.approx(0.0, abs=1e-14)
    x = np.linspace(0, 10, 501)
    assert np.all(barrier_value_derivatives(p, d, x)[0] >= boundary_value_g(p, d, x) - 1e-12)


def test_gradient_operator_is_the_max_over_d():
    vx = np.array([0.2, 1.0, 1.7])
    for b in (0.0, 0.4, 1.0):
        brute = np.max([dd * (1 - vx) for dd in np.linspace(b, 1, 101)], axis=0)
        np.testing.assert_allclose(gradient_operator(b, vx), brute, atol=1e-15)


def test_boundary_strategy(paper):
    p, d = paper
    np.testing.assert_allclose(boundary_strategy(p, d, np.array([0.5, d.y0, 3.0])), [0.18, 0.3, 0.3])
    q = ModelParams(b=0.3, **FIGURE1)
    assert boundary_strategy(q, derive_constants(q), 0.1) == q.cbar


def test_to_dict_roundtrip(paper):
    p, d = paper
    assert ModelParams(**p.to_dict()) == p
    assert d.to_dict()["regime"] == "Complicated"
    assert p.value_scale == pytest.approx(6.0)


@settings(max_examples=200, deadline=None)
@given(valid_params)
def test_g_is_finite_increasing_and_bounded(p):
    d = derive_constants(p)
    top = 3 * (d.y0 or 1.0) + 10 / d.gamma
    x = np.linspace(0, top, 801)
    g = boundary_value_g(p, d, x)
    scale = p.cbar / p.r
    assert np.all(np.isfinite(g))
    assert g[0] == pytest.approx(0.0, abs=1e-9 * scale)
    assert np.all(np.diff(g) >= -1e-12 * scale)
    assert np.all(g <= scale * (1 + 1e-12))

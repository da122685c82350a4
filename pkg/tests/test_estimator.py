import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

import drawdown_dividends.estimator as est_mod
from drawdown_dividends.estimator import DrawdownDividendSolver
from drawdown_dividends.exceptions import NotFound, ParameterError
from drawdown_dividends.model import Regime
from drawdown_dividends.solver import surface_interpolate


def small(**kw):
    return DrawdownDividendSolver(nx=800, nc=40, **kw)


def test_params_roundtrip_and_clone():
    est = small(b=0.8)
    params = est.get_params()
    assert params["b"] == 0.8 and params["nx"] == 800
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(b=0.4)
    assert est.b == 0.4


def test_fit_predict():
    est = small().fit()
    assert est.regime_ is Regime.COMPLICATED and est.n_doublings_ == 0
    X = np.array([[0.0, 0.1], [1.0, 0.3], [2.0, 0.05]])
    pred = est.predict(X)
    assert pred.shape == (3,)
    assert pred[0] == 0.0
    assert pred[1] == pytest.approx(float(surface_interpolate(est.surface_, 1.0, 0.3)))


def test_predict_rate_follows_the_feedback_rule():
    est = small().fit()
    fb = est.boundaries_
    rates = est.predict_rate(np.array([[0.2, 0.1], [3.0, 0.1], [1.5, 0.3]]))
    assert rates[0] == pytest.approx(0.6 * 0.1)  # deep in the minimum-payout region
    assert rates[1] == pytest.approx(0.3)  # far above every switching point
    assert rates[2] == pytest.approx(0.3 if 1.5 >= fb.Y_of_c[0] else 0.18)


def test_simple_regime_rate_is_cbar():
    est = DrawdownDividendSolver(mu=0.1, sigma=0.8, r=0.08, cbar=0.1, b=0.5, nx=400, nc=10).fit()
    assert est.regime_ is Regime.SIMPLE
    np.testing.assert_allclose(est.predict_rate(np.array([[0.1, 0.0], [4.0, 0.05]])), 0.1)


def test_input_validation():
    with pytest.raises(NotFittedError):
        small().predict(np.array([[1.0, 0.1]]))
    est = small().fit()
    with pytest.raises(ValueError):
        est.predict(np.array([[1.0, 0.1, 3.0]]))
    with pytest.raises(ValueError):
        est.predict(np.array([[np.nan, 0.1]]))
    with pytest.raises(ParameterError):
        DrawdownDividendSolver(cbar=0.5).fit()


def test_truncation_guard_doubles_x_max(monkeypatch):
    monkeypatch.setattr(est_mod, "_GUARD_FRACTION", 0.2)
    est = small(max_doublings=3).fit()
    assert est.n_doublings_ >= 1
    grid = est.surface_.grid
    assert grid.x_max == pytest.approx(6.0 * 2**est.n_doublings_)
    assert grid.dx == pytest.approx(6.0 / 800)
    assert np.max(est.boundaries_.X_of_c) < 0.2 * grid.x_max


def test_truncation_guard_gives_up(monkeypatch):
    monkeypatch.setattr(est_mod, "_GUARD_FRACTION", 1e-6)
    with pytest.raises(NotFound):
        small(max_doublings=1).fit()

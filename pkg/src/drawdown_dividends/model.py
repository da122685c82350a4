"""Model parameters, derived constants and the closed-form solutions.

Everything here is a pure function of :class:`ModelParams`.  The closed forms
cover the boundary row ``V(x, cbar) = g(x)``, the whole value function in the
simple regime, and the barrier super-solution used as an a priori bound on the
numerical surface.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, asdict

import numpy as np

from .exceptions import DomainError, NoRoot, ParameterError, RegimeError

__all__ = [
    "ModelParams",
    "Regime",
    "DerivedConstants",
    "classify_regime",
    "derive_constants",
    "boundary_value_g",
    "boundary_value_g_derivatives",
    "boundary_residual",
    "simple_case_value",
    "barrier_value",
    "barrier_value_derivatives",
    "boundary_strategy",
    "gradient_operator",
]


@dataclass(frozen=True)
class ModelParams:
    """Surplus drift/volatility, discount rate, payout cap and drawdown proportion."""

    mu: float
    sigma: float
    r: float
    cbar: float
    b: float

    def __post_init__(self):
        for name in ("mu", "sigma", "r", "cbar", "b"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value!r}")
        if self.sigma <= 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if self.r <= 0:
            raise ParameterError(f"r must be positive, got {self.r}")
        if not 0 < self.cbar <= self.mu:
            raise ParameterError(f"need 0 < cbar <= mu, got cbar={self.cbar}, mu={self.mu}")
        if not 0 <= self.b <= 1:
            raise ParameterError(f"b must lie in [0, 1], got {self.b}")

    @property
    def value_scale(self) -> float:
        """Upper bound cbar / r of every value function in the model."""
        return self.cbar / self.r

    def to_dict(self) -> dict:
        return asdict(self)


class Regime(enum.Enum):
    SIMPLE = "Simple"
    COMPLICATED = "Complicated"

    def __str__(self):
        return self.value


def classify_regime(p: ModelParams) -> Regime:
    """Simple iff ``2 mu cbar <= sigma^2 r`` (equivalently ``cbar * gamma <= r``)."""
    if 2.0 * p.mu * p.cbar <= p.sigma**2 * p.r:
        return Regime.SIMPLE
    return Regime.COMPLICATED


def _positive_root(sigma2: float, slope: float, r: float) -> float:
    """Positive root of ``-sigma2/2 z^2 + slope z + r = 0``, cancellation-free."""
    disc = math.sqrt(slope * slope + 2.0 * sigma2 * r)
    if slope >= 0:
        return (disc + slope) / sigma2
    return 2.0 * r / (disc - slope)


@dataclass(frozen=True)
class DerivedConstants:
    """Roots and coefficients of the closed forms, plus the regime tag.

    ``y0`` is ``None`` in the simple regime; use :meth:`require_y0` where the
    free point is mandatory.
    """

    regime: Regime
    gamma: float
    lambda1: float
    lambda2: float
    k1: float
    k2: float
    y0: float | None
    theta1: float
    theta2: float
    x_infty: float
    K1_bar: float
    K2_bar: float

    def require_y0(self) -> float:
        if self.y0 is None:
            raise NoRoot("y0 is only defined in the complicated regime")
        return self.y0

    def quadratic_residuals(self, p: ModelParams) -> dict:
        s2 = p.sigma**2
        return {
            "gamma": -0.5 * s2 * self.gamma**2 + (p.mu - p.cbar) * self.gamma + p.r,
            "lambda1": -0.5 * s2 * self.lambda1**2 - (p.mu - p.b * p.cbar) * self.lambda1 + p.r,
            "lambda2": -0.5 * s2 * self.lambda2**2 + (p.mu - p.b * p.cbar) * self.lambda2 + p.r,
            "theta1": -0.5 * s2 * self.theta1**2 + p.mu * self.theta1 + p.r,
            "theta2": -0.5 * s2 * self.theta2**2 - p.mu * self.theta2 + p.r,
        }

    def to_dict(self) -> dict:
        out = asdict(self)
        out["regime"] = str(self.regime)
        return out


def _y0_function(k1, k2, lam1, lam2, floor):
    def f(y):
        if lam2 * y > 700.0:
            # the growing exponential dominates; only the sign matters here
            return -math.inf
        return k1 * math.exp(-lam1 * y) - k2 * math.exp(lam2 * y) + floor

    def fprime(y):
        return -lam1 * k1 * math.exp(-lam1 * y) - lam2 * k2 * math.exp(lam2 * y)

    return f, fprime


def _solve_y0(k1, k2, lam1, lam2, floor) -> float:
    # f is strictly decreasing with f(0) > 0, so bracketing + bisection cannot fail.
    f, fprime = _y0_function(k1, k2, lam1, lam2, floor)
    if not f(0.0) > 0:
        raise RegimeError(f"f(0) = {f(0.0)} is not positive; parameters are not in the complicated regime")
    lo, hi = 0.0, 1.0 / lam2
    while f(hi) >= 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise RuntimeError("failed to bracket y0")
    while hi - lo > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    y = 0.5 * (lo + hi)
    for _ in range(2):
        y -= f(y) / fprime(y)
    return y


def derive_constants(p: ModelParams) -> DerivedConstants:
    s2 = p.sigma**2
    regime = classify_regime(p)
    gamma = _positive_root(s2, p.mu - p.cbar, p.r)
    lambda2 = _positive_root(s2, p.mu - p.b * p.cbar, p.r)
    lambda1 = _positive_root(s2, -(p.mu - p.b * p.cbar), p.r)
    shift = (1.0 - p.b) * p.cbar / p.r - 1.0 / gamma
    k1 = (1.0 + lambda2 * shift) / (lambda1 + lambda2)
    k2 = (1.0 - lambda1 * shift) / (lambda1 + lambda2)

    y0 = None
    if regime is Regime.COMPLICATED:
        y0 = _solve_y0(k1, k2, lambda1, lambda2, p.b * p.cbar / p.r)

    theta1 = _positive_root(s2, p.mu, p.r)
    theta2 = _positive_root(s2, -p.mu, p.r)
    x_infty = 2.0 / (theta1 + theta2) * math.log(theta1 / theta2)
    K1_bar = 1.0 / (theta2 * math.exp(theta2 * x_infty) + theta1 * math.exp(-theta1 * x_infty))
    # continuity at x_infty fixes the additive constant of the linear piece
    K2_bar = K1_bar * (math.exp(theta2 * x_infty) - math.exp(-theta1 * x_infty)) - x_infty

    return DerivedConstants(
        regime=regime,
        gamma=gamma,
        lambda1=lambda1,
        lambda2=lambda2,
        k1=k1,
        k2=k2,
        y0=y0,
        theta1=theta1,
        theta2=theta2,
        x_infty=x_infty,
        K1_bar=K1_bar,
        K2_bar=K2_bar,
    )


def _check_nonnegative(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError("x must be nonnegative")
    return x


def boundary_value_g_derivatives(p: ModelParams, d: DerivedConstants, x):
    """Return ``(g, g', g'')`` at ``x`` (scalar or array)."""
    x = _check_nonnegative(x)
    scale = p.cbar / p.r
    if d.regime is Regime.SIMPLE:
        e = np.exp(-d.gamma * x)
        g = scale * (1.0 - e)
        g1 = scale * d.gamma * e
        g2 = -scale * d.gamma**2 * e
    else:
        y0 = d.y0
        below = x <= y0
        z = x - y0
        # clip exponents so the branch not taken cannot overflow
        e1 = np.exp(d.lambda1 * np.minimum(z, 0.0))
        e2 = np.exp(-d.lambda2 * np.minimum(z, 0.0))
        eg = np.exp(-d.gamma * np.maximum(z, 0.0))
        g = np.where(below, d.k1 * e1 - d.k2 * e2 + p.b * scale, scale - eg / d.gamma)
        g1 = np.where(below, d.lambda1 * d.k1 * e1 + d.lambda2 * d.k2 * e2, eg)
        g2 = np.where(below, d.lambda1**2 * d.k1 * e1 - d.lambda2**2 * d.k2 * e2, -d.gamma * eg)
    if g.ndim == 0:
        return float(g), float(g1), float(g2)
    return g, g1, g2


def boundary_value_g(p: ModelParams, d: DerivedConstants, x):
    """Value ``V(x, cbar)`` of the problem started at the maximal running rate."""
    return boundary_value_g_derivatives(p, d, x)[0]


def gradient_operator(b: float, vx):
    """``max_{b <= d <= 1} d (1 - v_x) = b (1 - v_x) + (1 - b) (1 - v_x)^+``."""
    gap = 1.0 - np.asarray(vx, dtype=float)
    return b * gap + (1.0 - b) * np.maximum(gap, 0.0)


def boundary_residual(p: ModelParams, d: DerivedConstants, x):
    """Pointwise ``-L g - cbar T g`` using analytic derivatives."""
    g, g1, g2 = boundary_value_g_derivatives(p, d, x)
    return -0.5 * p.sigma**2 * g2 - p.mu * g1 + p.r * g - p.cbar * gradient_operator(p.b, g1)


def simple_case_value(p: ModelParams, d: DerivedConstants, x, c=None):
    """``V(x, c) = (cbar / r)(1 - exp(-gamma x))`` in the simple regime, for every ``c``."""
    if d.regime is not Regime.SIMPLE:
        raise RegimeError("closed-form value is only available in the simple regime")
    if c is not None:
        c = np.asarray(c, dtype=float)
        if np.any(c < 0) or np.any(c > p.cbar):
            raise DomainError(f"c must lie in [0, {p.cbar}]")
    x = _check_nonnegative(x)
    v = p.cbar / p.r * (1.0 - np.exp(-d.gamma * x))
    if c is not None:
        v = np.broadcast_to(v, np.broadcast_shapes(x.shape, c.shape)).copy()
    return float(v) if np.ndim(v) == 0 else v


def barrier_value_derivatives(p: ModelParams, d: DerivedConstants, x):
    """Return ``(vbar, vbar', vbar'')`` of the unconstrained barrier super-solution."""
    x = _check_nonnegative(x)
    inner = x < d.x_infty
    xc = np.minimum(x, d.x_infty)
    ep = np.exp(d.theta2 * xc)
    em = np.exp(-d.theta1 * xc)
    v = np.where(inner, d.K1_bar * (ep - em), d.K2_bar + x)
    v1 = np.where(inner, d.K1_bar * (d.theta2 * ep + d.theta1 * em), 1.0)
    v2 = np.where(inner, d.K1_bar * (d.theta2**2 * ep - d.theta1**2 * em), 0.0)
    if v.ndim == 0:
        return float(v), float(v1), float(v2)
    return v, v1, v2


def barrier_value(p: ModelParams, d: DerivedConstants, x):
    return barrier_value_derivatives(p, d, x)[0]


def boundary_strategy(p: ModelParams, d: DerivedConstants, x):
    """Optimal payout rate when the running maximum already equals ``cbar``."""
    x = np.asarray(x, dtype=float)
    if d.regime is Regime.SIMPLE:
        rate = np.full_like(x, p.cbar)
    else:
        rate = np.where(x >= d.y0, p.cbar, p.b * p.cbar)
    return float(rate) if rate.ndim == 0 else rate

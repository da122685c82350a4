"""scikit-learn style front end: ``fit`` solves the surface, ``predict`` evaluates it."""
from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .boundaries import FreeBoundaries, equivalent_max_rate, extract_boundaries
from .exceptions import NotFound
from .model import DerivedConstants, ModelParams, Regime, derive_constants
from .solver import SolverGrid, SolverTolerances, ValueSurface, solve_system, surface_interpolate

logger = logging.getLogger(__name__)

__all__ = ["DrawdownDividendSolver", "solve_guarded"]

_GUARD_FRACTION = 0.9


def solve_guarded(
    p: ModelParams,
    d: DerivedConstants | None = None,
    grid: SolverGrid | None = None,
    *,
    tolerances: SolverTolerances | None = None,
    eps_fb: float | None = None,
    force_recursion: bool = False,
    max_doublings: int = 4,
) -> tuple[ValueSurface, FreeBoundaries, int]:
    """Solve and extract boundaries, doubling ``x_max`` while ``X(c)`` crowds it.

    ``dx`` is kept fixed, so ``nx`` doubles with ``x_max``.  Returns the
    surface, its boundaries and the number of doublings performed.
    """
    d = derive_constants(p) if d is None else d
    grid = SolverGrid.default(p, d) if grid is None else grid
    for doublings in range(max_doublings + 1):
        s = solve_system(p, d, grid, tolerances=tolerances, force_recursion=force_recursion)
        try:
            fb = extract_boundaries(s, eps_fb)
            crowded = float(np.max(fb.X_of_c)) >= _GUARD_FRACTION * grid.x_max
        except NotFound:
            fb, crowded = None, True
        if not crowded:
            return s, fb, doublings
        if doublings == max_doublings:
            break
        logger.info("switching boundary within 10%% of x_max=%g; doubling", grid.x_max)
        grid = SolverGrid(2.0 * grid.x_max, 2 * grid.nx, grid.nc, grid.cbar)
    raise NotFound(f"switching boundary still crowds x_max={grid.x_max} after {max_doublings} doublings")


class DrawdownDividendSolver(BaseEstimator):
    """Value function of the optimal dividend problem under a drawdown constraint.

    Hyperparameters are the model primitives and the grid.  ``fit`` ignores its
    arguments (the model has no data) and solves the level recursion;
    ``predict`` maps rows ``(x, c)`` to ``v(x, c)``.

    Fitted attributes: ``params_``, ``constants_``, ``regime_``, ``surface_``,
    ``boundaries_``, ``n_doublings_``.
    """

    def __init__(
        self,
        mu=0.3,
        sigma=0.3,
        r=0.05,
        cbar=0.3,
        b=0.6,
        nx=4000,
        nc=300,
        x_max=None,
        eps_fb=None,
        rho=None,
        tol_fix=None,
        max_iter=200,
        force_recursion=False,
        max_doublings=4,
    ):
        self.mu = mu
        self.sigma = sigma
        self.r = r
        self.cbar = cbar
        self.b = b
        self.nx = nx
        self.nc = nc
        self.x_max = x_max
        self.eps_fb = eps_fb
        self.rho = rho
        self.tol_fix = tol_fix
        self.max_iter = max_iter
        self.force_recursion = force_recursion
        self.max_doublings = max_doublings

    def fit(self, X=None, y=None):
        p = ModelParams(float(self.mu), float(self.sigma), float(self.r), float(self.cbar), float(self.b))
        d = derive_constants(p)
        grid = SolverGrid.default(p, d, nx=self.nx, nc=self.nc, x_max=self.x_max)
        tolerances = SolverTolerances(rho=self.rho, tol_fix=self.tol_fix, max_iter=self.max_iter)
        s, fb, doublings = solve_guarded(
            p,
            d,
            grid,
            tolerances=tolerances,
            eps_fb=self.eps_fb,
            force_recursion=self.force_recursion,
            max_doublings=self.max_doublings,
        )
        self.params_ = p
        self.constants_ = d
        self.regime_ = d.regime
        self.surface_ = s
        self.boundaries_ = fb
        self.n_doublings_ = doublings
        return self

    def _states(self, X):
        check_is_fitted(self, "surface_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 2:
            raise ValueError(f"expected rows (x, c), got {X.shape[1]} columns")
        return X[:, 0], X[:, 1]

    def predict(self, X):
        """``v(x, c)`` for each row ``(x, c)`` of ``X``."""
        x, c = self._states(X)
        return np.asarray(surface_interpolate(self.surface_, x, c), dtype=float)

    def predict_rate(self, X):
        """Optimal payout rate at each state, after the running maximum has been updated."""
        x, c = self._states(X)
        p, fb = self.params_, self.boundaries_
        if self.regime_ is Regime.SIMPLE:
            return np.full(x.shape, p.cbar)
        M = np.array([equivalent_max_rate(self.surface_, xi, ci, fb.eps_fb) for xi, ci in zip(x, c)])
        return (p.b + (1.0 - p.b) * (x >= fb.Y_at(M))) * M

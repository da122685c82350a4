"""Free boundaries of a solved surface.

Two curves split the state space:

* the switching boundary ``X(c)``: above it the running maximum can be raised
  without losing value (rows coincide);
* the converting boundary ``Y(c)``: where ``v_x`` crosses 1, separating minimum
  and maximum payout.

Levels are indexed as in :class:`~drawdown_dividends.solver.ValueSurface`:
row ``i`` holds ``c_i = cbar - i dc``.  The free point ``x_i`` of level ``i``
(where ``v_i`` meets ``v_{i-1}``) is the switching boundary of level ``c_i``.
At the top level the boundary is defined by its limit, so ``X(cbar) = x_1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NotFound
from .solver import ValueSurface

__all__ = [
    "FreeBoundaries",
    "default_eps",
    "extract_switching_boundary",
    "extract_converting_boundary",
    "extract_boundaries",
    "equivalent_max_rate",
    "equivalent_min_rate",
    "equivalent_max_rate_table",
]


def default_eps(s: ValueSurface) -> float:
    # active nodes are pinned exactly to the obstacle, so coinciding rows differ
    # only by round-off; a larger threshold would bias X(c) by several nodes
    return 1e-10 * s.params.cbar / s.params.r


@dataclass
class FreeBoundaries:
    c_levels: np.ndarray
    X_of_c: np.ndarray
    Y_of_c: np.ndarray
    x_free: np.ndarray
    y0_ref: float | None
    eps_fb: float
    diagnostics: dict = field(default_factory=dict)

    def Y_at(self, c):
        """Converting boundary at arbitrary ``c``, linear between levels."""
        # levels are stored in decreasing order
        return np.interp(c, self.c_levels[::-1], self.Y_of_c[::-1])

    def X_at(self, c):
        return np.interp(c, self.c_levels[::-1], self.X_of_c[::-1])


def extract_switching_boundary(s: ValueSurface, eps_fb: float | None = None):
    """Per-level free points and the sampled switching boundary.

    ``x_i`` is the smallest grid point from which the gap ``v_i - v_{i-1}``
    stays at or below ``eps_fb``.  Returns ``(x_free, X_of_c)`` with
    ``x_free[0] = nan`` (level 0 has no obstacle).
    """
    eps = default_eps(s) if eps_fb is None else eps_fb
    x = s.grid.x
    nx = s.grid.nx
    gaps = np.diff(s.v, axis=0)
    x_free = np.full(s.grid.nc + 1, np.nan)
    for i, gap in enumerate(gaps, start=1):
        above = np.nonzero(gap[1:] > eps)[0]
        if above.size == 0:
            x_free[i] = x[0]
            continue
        last = above[-1] + 1
        if last >= nx - 1:
            raise NotFound(
                f"gap at level {i} stays above eps up to x_max={s.grid.x_max}; truncation too small"
            )
        x_free[i] = x[last + 1]
    X_of_c = x_free.copy()
    X_of_c[0] = x_free[1] if s.grid.nc >= 1 else np.nan
    return x_free, X_of_c


def extract_converting_boundary(s: ValueSurface) -> np.ndarray:
    """First crossing of ``v_x = 1`` per level, refined by inverse interpolation."""
    x = s.grid.x
    Y = np.empty(s.grid.nc + 1)
    for i, vx in enumerate(s.vx):
        hits = np.nonzero(vx <= 1.0)[0]
        if hits.size == 0:
            raise NotFound(f"v_x > 1 on the whole row {i}")
        j = hits[0]
        if j == 0:
            Y[i] = x[0]
            continue
        a, b = vx[j - 1], vx[j]
        Y[i] = x[j - 1] + (a - 1.0) / (a - b) * (x[j] - x[j - 1])
    return Y


def _boundary_diagnostics(s: ValueSurface, fb: FreeBoundaries) -> dict:
    grid = s.grid
    vx_at_X = np.array(
        [np.interp(X, grid.x, vx) for X, vx in zip(fb.X_of_c, s.vx)]
    )
    dX = np.diff(fb.X_of_c)
    out = {
        "max_vx_at_X": float(np.max(vx_at_X)),
        "max_jump_X": float(np.max(np.abs(dX))) if dX.size else 0.0,
        "max_jump_Y": float(np.max(np.abs(np.diff(fb.Y_of_c)))) if dX.size else 0.0,
        # X should be nondecreasing in c, i.e. nonincreasing along the row index
        "X_monotonicity_violations": int(np.sum(dX > grid.dx)),
        "min_X_minus_Y": float(np.min(fb.X_of_c - fb.Y_of_c)),
    }
    if fb.y0_ref is not None:
        out["Y_top_minus_y0"] = float(fb.Y_of_c[0] - fb.y0_ref)
    return out


def extract_boundaries(s: ValueSurface, eps_fb: float | None = None) -> FreeBoundaries:
    eps = default_eps(s) if eps_fb is None else eps_fb
    x_free, X_of_c = extract_switching_boundary(s, eps)
    Y_of_c = extract_converting_boundary(s)
    fb = FreeBoundaries(
        c_levels=s.grid.c_levels,
        X_of_c=X_of_c,
        Y_of_c=Y_of_c,
        x_free=x_free,
        y0_ref=s.constants.y0,
        eps_fb=eps,
    )
    fb.diagnostics.update(_boundary_diagnostics(s, fb))
    return fb


def _column(s: ValueSurface, x: float) -> np.ndarray:
    """``v(x, c_k)`` for every level ``k``."""
    # every row vanishes at x = 0, so the test there uses the first interior node
    x = min(max(float(x), s.grid.dx), s.grid.x_max)
    return np.array([np.interp(x, s.grid.x, row) for row in s.v])


def _level_position(s: ValueSurface, c: float) -> float:
    return (s.grid.cbar - c) / s.grid.dc


def equivalent_max_rate(s: ValueSurface, x: float, c: float, eps_fb: float | None = None) -> float:
    """Largest level ``s' >= c`` with ``|v(x, s') - v(x, c)| <= eps_fb``, scanning upward.

    The scan stops at the first level that fails the test; ``c`` itself may
    lie between levels.
    """
    eps = default_eps(s) if eps_fb is None else eps_fb
    col = _column(s, x)
    levels = s.grid.c_levels
    t = _level_position(s, c)
    base = float(np.interp(t, np.arange(levels.size), col))
    k = int(np.ceil(t - 1e-9)) - 1  # first row strictly above c
    rate = float(c)
    while k >= 0 and abs(col[k] - base) <= eps:
        rate = float(levels[k])
        k -= 1
    return rate


def equivalent_min_rate(s: ValueSurface, x: float, c: float, eps_fb: float | None = None) -> float:
    """Smallest level ``s' <= c`` with ``|v(x, s') - v(x, c)| <= eps_fb``, scanning downward."""
    eps = default_eps(s) if eps_fb is None else eps_fb
    col = _column(s, x)
    levels = s.grid.c_levels
    t = _level_position(s, c)
    base = float(np.interp(t, np.arange(levels.size), col))
    k = int(np.floor(t + 1e-9)) + 1  # first row strictly below c
    rate = float(c)
    while k < levels.size and abs(col[k] - base) <= eps:
        rate = float(levels[k])
        k += 1
    return rate


def equivalent_max_rate_table(s: ValueSurface, c: float, eps_fb: float | None = None) -> np.ndarray:
    """``xi(x_j, c)`` at every grid node, made nondecreasing in ``x``.

    Vectorised :func:`equivalent_max_rate` for the simulator.  Grid noise can
    make the raw table dip by a level where adjacent free points cross; the
    running maximum over ``x`` removes that, matching the monotonicity of the
    continuous rate.
    """
    eps = default_eps(s) if eps_fb is None else eps_fb
    grid = s.grid
    levels = grid.c_levels
    v = s.v.copy()
    v[:, 0] = v[:, 1]
    t = _level_position(s, c)
    k = int(np.floor(t))
    frac = t - k
    base = v[k] if frac < 1e-9 else (1 - frac) * v[k] + frac * v[k + 1]
    xi = np.full(grid.nx + 1, float(c))
    alive = np.ones(grid.nx + 1, dtype=bool)
    k = int(np.ceil(t - 1e-9)) - 1
    while k >= 0:
        alive &= np.abs(v[k] - base) <= eps
        if not alive.any():
            break
        xi[alive] = levels[k]
        k -= 1
    return np.maximum.accumulate(xi)

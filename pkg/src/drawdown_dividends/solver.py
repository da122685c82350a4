"""Level recursion for the HJB variational inequality.

The running-maximum axis is cut into levels ``c_i = cbar - i * dc``.  Level 0 is
the closed-form boundary row; every further level solves a one-dimensional
obstacle problem

    min{ -L v_i - c_i T v_i , v_i - v_{i-1} } = 0,   v_i(0) = 0,

with the previous row as obstacle.  Each level is discretised with a monotone
three-point stencil and solved by penalised policy iteration: the control
``d in {b, 1}`` hidden in ``T`` and the penalty active set are updated together,
and every sweep is one tridiagonal solve.  A final active-set pass pins the
binding nodes exactly to the obstacle, so the penalty error does not pile up
across levels.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_banded

from .exceptions import DomainError, NonConvergence, ObstacleViolation, ParameterError
from .model import (
    DerivedConstants,
    ModelParams,
    Regime,
    boundary_value_g_derivatives,
    derive_constants,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SolverGrid",
    "SolverTolerances",
    "ValueSurface",
    "LevelSolution",
    "solve_obstacle_level",
    "solve_system",
    "surface_interpolate",
    "level_residual",
    "closed_form_surface",
]


@dataclass(frozen=True)
class SolverGrid:
    x_max: float
    nx: int
    nc: int
    cbar: float

    def __post_init__(self):
        if not (self.x_max > 0 and math.isfinite(self.x_max)):
            raise ParameterError(f"x_max must be positive, got {self.x_max}")
        if self.nx < 100:
            raise ParameterError(f"nx must be at least 100, got {self.nx}")
        if self.nc < 1:
            raise ParameterError(f"nc must be at least 1, got {self.nc}")
        if self.cbar <= 0:
            raise ParameterError("cbar must be positive")

    @property
    def dx(self) -> float:
        return self.x_max / self.nx

    @property
    def dc(self) -> float:
        return self.cbar / self.nc

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.nx + 1)

    @property
    def c_levels(self) -> np.ndarray:
        """Levels ``c_i = cbar - i dc``, strictly decreasing from cbar to 0."""
        c = self.cbar - self.dc * np.arange(self.nc + 1)
        c[-1] = 0.0
        return c

    @staticmethod
    def default_x_max(p: ModelParams, d: DerivedConstants) -> float:
        candidates = [2.0 * d.x_infty, 20.0 * p.sigma**2 / p.mu]
        if d.y0 is not None:
            candidates.append(3.0 * d.y0)
        return max(candidates)

    @classmethod
    def default(cls, p: ModelParams, d: DerivedConstants | None = None, nx=4000, nc=300, x_max=None):
        d = derive_constants(p) if d is None else d
        if x_max is None:
            x_max = cls.default_x_max(p, d)
        return cls(x_max=float(x_max), nx=int(nx), nc=int(nc), cbar=p.cbar)

    def check_against(self, p: ModelParams, d: DerivedConstants) -> None:
        """Raise if the truncation point is too small for the given model."""
        if not math.isclose(self.cbar, p.cbar):
            raise ParameterError("grid cbar does not match model cbar")
        if self.x_max <= d.x_infty:
            raise ParameterError(f"x_max={self.x_max} must exceed x_infty={d.x_infty:.6g}")
        if d.y0 is not None and self.x_max <= 3.0 * d.y0:
            raise ParameterError(f"x_max={self.x_max} must exceed 3*y0={3 * d.y0:.6g}")

    def to_dict(self) -> dict:
        return {"x_max": self.x_max, "nx": self.nx, "nc": self.nc, "dx": self.dx, "dc": self.dc}


@dataclass(frozen=True)
class SolverTolerances:
    """Numerical knobs; ``None`` entries scale with the value scale ``cbar / r``."""

    rho: float | None = None
    tol_fix: float | None = None
    tol_obstacle: float | None = None
    max_iter: int = 200

    def resolved(self, p: ModelParams) -> dict:
        scale = p.cbar / p.r
        return {
            "rho": 1e7 * p.r if self.rho is None else self.rho,
            "tol_fix": 1e-10 * scale if self.tol_fix is None else self.tol_fix,
            "tol_obstacle": 1e-8 * scale if self.tol_obstacle is None else self.tol_obstacle,
            "max_iter": self.max_iter,
        }


class LevelSolution(NamedTuple):
    v: np.ndarray
    control: np.ndarray
    active: np.ndarray
    iterations: int


def _stencil(drift, diff, dx):
    """Coefficients of ``v_{j-1}``, ``v_{j+1}`` in ``sigma^2/2 v'' + drift v'``.

    Central differencing wherever it keeps both coefficients nonnegative,
    one-sided in the drift direction otherwise, so the assembled matrix is an
    M-matrix for any dx.
    """
    lo = diff - drift / (2.0 * dx)
    hi = diff + drift / (2.0 * dx)
    central = (lo >= 0) & (hi >= 0)
    lo_up = diff + np.maximum(-drift, 0.0) / dx
    hi_up = diff + np.maximum(drift, 0.0) / dx
    return np.where(central, lo, lo_up), np.where(central, hi, hi_up)


def _level_operator(v, c, control, p, dx):
    """Return ``(lo, hi)`` coefficients and ``A_d v - c d`` on interior nodes."""
    diff = 0.5 * p.sigma**2 / dx**2
    lo, hi = _stencil(p.mu - c * control, diff, dx)
    resid = -lo * v[:-2] + (lo + hi + p.r) * v[1:-1] - hi * v[2:] - c * control
    return lo, hi, resid


def level_residual(v, c, p: ModelParams, dx: float) -> np.ndarray:
    """Discrete ``-L v - c T v`` on interior nodes (min over the two controls)."""
    v = np.asarray(v, dtype=float)
    ones = np.ones(v.size - 2)
    _, _, res_b = _level_operator(v, c, p.b * ones, p, dx)
    _, _, res_1 = _level_operator(v, c, ones, p, dx)
    return np.minimum(res_b, res_1)


def solve_obstacle_level(
    v_prev,
    c_i: float,
    grid: SolverGrid,
    p: ModelParams,
    d: DerivedConstants | None = None,
    *,
    tolerances: SolverTolerances | None = None,
    right_value: float | None = None,
    v_init=None,
    active_init=None,
) -> LevelSolution:
    """Solve one obstacle level given the row above it.

    Parameters
    ----------
    v_prev : array of shape (nx + 1,)
        Obstacle row ``v_{i-1}`` sampled on ``grid.x``.
    c_i : float
        Dividend level of the row being solved.
    right_value : float, optional
        Dirichlet value at ``x_max``.  Defaults to ``v_prev[-1]``, since the
        obstacle binds beyond the free point; an obstacle that vanishes at the
        right end carries no information, in which case the far-field value
        ``c_i / r`` of the unobstructed level is used.
    active_init : bool array of shape (nx + 1,), optional
        Initial guess of the nodes where the obstacle binds.  Active-set
        sweeps move the free point by a few nodes at a time, so a good guess
        (the previous level's set) matters.  Without one, a coarse-grid solve
        of the same level provides it.

    Returns
    -------
    LevelSolution
        Row values, the bang-bang control per node (``b`` or ``1``), the
        penalty active set and the number of policy sweeps.
    """
    tol = (tolerances or SolverTolerances()).resolved(p)
    v_prev = np.asarray(v_prev, dtype=float)
    n = grid.nx
    if v_prev.shape != (n + 1,):
        raise ValueError(f"v_prev must have shape ({n + 1},), got {v_prev.shape}")
    if not 0.0 <= c_i <= p.cbar * (1 + 1e-12):
        raise DomainError(f"c_i={c_i} outside [0, {p.cbar}]")
    dx = grid.dx
    if right_value is None:
        right_value = v_prev[-1] if v_prev[-1] > 0 else c_i / p.r

    if active_init is None and n >= 4 * _COARSEST:
        active_init = _coarse_active_guess(v_prev, c_i, grid, p, tolerances, right_value)

    v = np.array(v_prev if v_init is None else v_init, dtype=float)
    v[0] = 0.0
    v[-1] = right_value
    obstacle = v_prev[1:-1]
    rho = tol["rho"]

    control = np.ones(n - 1)
    active = np.zeros(n - 1, dtype=bool)
    ab = np.empty((3, n - 1))
    delta = np.inf
    for it in range(1, tol["max_iter"] + 1):
        # policy improvement: pick the control minimising the discrete residual, ties -> 1
        _, _, res_b = _level_operator(v, c_i, p.b * np.ones(n - 1), p, dx)
        _, _, res_1 = _level_operator(v, c_i, np.ones(n - 1), p, dx)
        new_control = np.where(res_1 <= res_b, 1.0, p.b)
        if it == 1 and active_init is not None:
            new_active = np.asarray(active_init, dtype=bool)[1:-1].copy()
        else:
            new_active = v[1:-1] < obstacle

        lo, hi, _ = _level_operator(v, c_i, new_control, p, dx)
        diag = lo + hi + p.r + rho * new_active
        rhs = c_i * new_control + rho * new_active * obstacle
        rhs[-1] += hi[-1] * right_value
        ab[0, 1:] = -hi[:-1]
        ab[1] = diag
        ab[2, :-1] = -lo[1:]
        interior = solve_banded((1, 1), ab, rhs, overwrite_ab=False, check_finite=False)

        delta = float(np.max(np.abs(interior - v[1:-1])))
        # flips at nodes where both choices agree within tol_fix are round-off
        # (e.g. a row that coincides with its obstacle) and do not count
        flips_a = new_active != active
        flips_c = new_control != control
        stable = not (
            np.any(np.abs(v[1:-1] - obstacle)[flips_a] > tol["tol_fix"])
            or np.any(np.abs(res_1 - res_b)[flips_c] > tol["tol_fix"] * p.r)
        )
        v[1:-1] = interior
        control, active = new_control, new_active
        if delta <= tol["tol_fix"] and stable:
            break
    else:
        raise NonConvergence(tol["max_iter"], delta)

    if active.any():
        v = _pin_active(v, c_i, control, active, obstacle, right_value, p, dx, tol)

    violation = float(np.max(obstacle - v[1:-1], initial=0.0))
    if violation > tol["tol_obstacle"]:
        raise ObstacleViolation(violation)

    full_control = np.empty(n + 1)
    full_control[1:-1] = control
    full_control[0], full_control[-1] = control[0], control[-1]
    full_active = np.zeros(n + 1, dtype=bool)
    full_active[1:-1] = active
    return LevelSolution(v, full_control, full_active, it)


def _pinned_solve(v, c_i, control, active, obstacle, right_value, p, dx):
    """Tridiagonal solve with ``v = obstacle`` imposed exactly on ``active``."""
    n = v.size - 1
    lo, hi, _ = _level_operator(v, c_i, control, p, dx)
    lo = np.where(active, 0.0, lo)
    hi = np.where(active, 0.0, hi)
    rhs = np.where(active, obstacle, c_i * control)
    rhs[-1] += hi[-1] * right_value
    ab = np.zeros((3, n - 1))
    ab[0, 1:] = -hi[:-1]
    ab[1] = np.where(active, 1.0, lo + hi + p.r)
    ab[2, :-1] = -lo[1:]
    out = v.copy()
    out[1:-1] = solve_banded((1, 1), ab, rhs, check_finite=False)
    return out


def _pin_active(v, c_i, control, active, obstacle, right_value, p, dx, tol, max_sweeps=50):
    """Turn the penalty solution into an exact complementarity solution.

    The penalty leaves active nodes ``O(residual / rho)`` below the obstacle,
    and the recursion would accumulate that offset level after level.  Starting
    from the penalty active set, primal-dual active-set sweeps pin ``v`` to the
    obstacle, release pinned nodes whose equation residual is negative and pin
    free nodes that dip below the obstacle.  The control is held fixed.  If the
    sweeps do not settle, the penalty solution is returned unchanged.
    """
    # Where the obstacle itself solves the equation (e.g. b = 0) residuals on
    # pinned nodes are pure round-off; releasing such a node would move v by
    # about resid / diag, far below tol_fix, so small residuals are left alone.
    res_slack = 1e-8 * p.cbar
    gap_slack = tol["tol_fix"]
    pinned = active.copy()
    for _ in range(max_sweeps):
        w = _pinned_solve(v, c_i, control, pinned, obstacle, right_value, p, dx)
        _, _, resid = _level_operator(w, c_i, control, p, dx)
        release = pinned & (resid < -res_slack)
        catch = ~pinned & (w[1:-1] < obstacle - gap_slack)
        if not (release.any() or catch.any()):
            return w
        pinned = (pinned & ~release) | catch
    logger.debug("active-set polish did not settle at c=%g; keeping penalty solution", c_i)
    return v


_COARSEST = 200


def _coarse_active_guess(v_prev, c_i, grid, p, tolerances, right_value):
    coarse = SolverGrid(grid.x_max, grid.nx // 4, grid.nc, grid.cbar)
    prev_coarse = np.interp(coarse.x, grid.x, v_prev)
    sol = solve_obstacle_level(
        prev_coarse, c_i, coarse, p, tolerances=tolerances, right_value=right_value
    )
    return np.interp(grid.x, coarse.x, sol.active.astype(float)) > 0.5


@dataclass
class ValueSurface:
    """Discrete value function ``v[i, j] ~ v(x_j, c_i)`` and its derived fields.

    Row ``i`` corresponds to ``c_i = cbar - i dc`` so rows are ordered from the
    top level ``cbar`` down to 0.
    """

    params: ModelParams
    constants: DerivedConstants
    grid: SolverGrid
    v: np.ndarray
    vx: np.ndarray
    active_d: np.ndarray
    obstacle_active: np.ndarray
    iterations: np.ndarray
    closed_form: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("v", "vx", "active_d", "obstacle_active", "iterations"):
            getattr(self, name).flags.writeable = False

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def c_levels(self) -> np.ndarray:
        return self.grid.c_levels

    @property
    def u(self) -> np.ndarray:
        """First differences ``(v_i - v_{i-1}) / dc`` for ``i = 1..nc``."""
        return np.diff(self.v, axis=0) / self.grid.dc

    def row(self, i: int) -> np.ndarray:
        return self.v[i]


def _finish_surface(p, d, grid, v, control, active, iterations, closed_form):
    vx = np.gradient(v, grid.dx, axis=1, edge_order=2)
    surface = ValueSurface(
        params=p,
        constants=d,
        grid=grid,
        v=v,
        vx=vx,
        active_d=control,
        obstacle_active=active,
        iterations=np.asarray(iterations, dtype=int),
        closed_form=closed_form,
    )
    surface.diagnostics.update(surface_diagnostics(surface))
    return surface


def closed_form_surface(p: ModelParams, d: DerivedConstants, grid: SolverGrid) -> ValueSurface:
    """Simple-regime surface: every row equals ``(cbar / r)(1 - exp(-gamma x))``."""
    g, g1, _ = boundary_value_g_derivatives(p, d, grid.x)
    v = np.tile(g, (grid.nc + 1, 1))
    control = np.tile(np.where(g1 <= 1.0, 1.0, p.b), (grid.nc + 1, 1))
    active = np.zeros_like(v, dtype=bool)
    active[1:, 1:-1] = True
    return _finish_surface(p, d, grid, v, control, active, np.zeros(grid.nc + 1), True)


def solve_system(
    p: ModelParams,
    d: DerivedConstants | None = None,
    grid: SolverGrid | None = None,
    *,
    tolerances: SolverTolerances | None = None,
    force_recursion: bool = False,
) -> ValueSurface:
    """Solve all levels from ``cbar`` down to 0.

    In the simple regime the closed form is returned unless
    ``force_recursion`` is set, in which case the recursion runs as in the
    complicated regime (useful as a consistency check).
    """
    d = derive_constants(p) if d is None else d
    grid = SolverGrid.default(p, d) if grid is None else grid
    if d.regime is Regime.SIMPLE and not force_recursion:
        return closed_form_surface(p, d, grid)
    grid.check_against(p, d)

    x = grid.x
    levels = grid.c_levels
    v = np.empty((grid.nc + 1, grid.nx + 1))
    control = np.empty_like(v)
    active = np.zeros_like(v, dtype=bool)
    iterations = np.zeros(grid.nc + 1, dtype=int)

    g, g1, _ = boundary_value_g_derivatives(p, d, x)
    v[0] = g
    v[0, 0] = 0.0  # exact boundary condition rather than the rounded closed form
    control[0] = np.where(g1 <= 1.0, 1.0, p.b)
    for i in range(1, grid.nc + 1):
        try:
            sol = solve_obstacle_level(
                v[i - 1],
                levels[i],
                grid,
                p,
                d,
                tolerances=tolerances,
                active_init=active[i - 1] if i > 1 else None,
            )
        except NonConvergence as exc:
            raise NonConvergence(exc.iterations, exc.last_delta, level=i) from exc
        except ObstacleViolation as exc:
            raise ObstacleViolation(exc.violation, level=i) from exc
        v[i], control[i], active[i], iterations[i] = sol
    logger.debug("solved %d levels, max %d sweeps", grid.nc, iterations.max())
    return _finish_surface(p, d, grid, v, control, active, iterations, False)


def surface_diagnostics(s: ValueSurface) -> dict:
    """Invariant residuals that make a surface self-certifying."""
    p, grid = s.params, s.grid
    v = s.v
    inactive_res = 0.0
    active_res = 0.0
    for i in range(1, grid.nc + 1):
        res = level_residual(v[i], grid.c_levels[i], p, grid.dx)
        act = s.obstacle_active[i, 1:-1]
        if np.any(~act):
            inactive_res = max(inactive_res, float(np.max(np.abs(res[~act]))))
        if np.any(act):
            active_res = min(active_res, float(np.min(res[act])))
    u = s.u
    return {
        "min_value": float(v.min()),
        "max_value": float(v.max()),
        "max_obstacle_violation": float(max(0.0, -np.diff(v, axis=0).min())) if grid.nc else 0.0,
        "min_vx": float(s.vx.min()),
        "max_abs_u": float(np.abs(u).max()) if u.size else 0.0,
        "pde_residual_inactive": inactive_res,
        "pde_residual_active_min": active_res,
        "max_iterations": int(s.iterations.max()),
    }


def surface_interpolate(s: ValueSurface, x, c):
    """Bilinear interpolation of the surface at ``(x, c)``; exact at nodes."""
    grid = s.grid
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    eps = 1e-12
    if np.any(x < -eps) or np.any(x > grid.x_max * (1 + eps)):
        raise DomainError(f"x outside [0, {grid.x_max}]")
    if np.any(c < -eps) or np.any(c > grid.cbar * (1 + eps)):
        raise DomainError(f"c outside [0, {grid.cbar}]")
    x, c = np.broadcast_arrays(x, c)
    tx = np.clip(x / grid.dx, 0.0, grid.nx)
    tc = np.clip((grid.cbar - c) / grid.dc, 0.0, grid.nc)
    j = np.minimum(np.floor(tx).astype(int), grid.nx - 1)
    i = np.minimum(np.floor(tc).astype(int), grid.nc - 1) if grid.nc > 0 else np.zeros_like(j)
    fx = tx - j
    fc = tc - i
    v = s.v
    top = (1 - fx) * v[i, j] + fx * v[i, j + 1]
    bottom = (1 - fx) * v[i + 1, j] + fx * v[i + 1, j + 1]
    out = (1 - fc) * top + fc * bottom
    return float(out) if out.ndim == 0 else out

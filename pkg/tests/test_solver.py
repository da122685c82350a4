import numpy as np
import pytest

from drawdown_dividends.exceptions import DomainError, NonConvergence, ParameterError
from drawdown_dividends.model import ModelParams, barrier_value, boundary_value_g, derive_constants
from drawdown_dividends.solver import (
    SolverGrid,
    SolverTolerances,
    closed_form_surface,
    level_residual,
    solve_obstacle_level,
    solve_system,
    surface_interpolate,
)

from conftest import FIGURE1, paper_params, solved


def test_grid_validation_and_levels():
    with pytest.raises(ParameterError):
        SolverGrid(6.0, 50, 10, 0.3)
    with pytest.raises(ParameterError):
        SolverGrid(-1.0, 500, 10, 0.3)
    with pytest.raises(ParameterError):
        SolverGrid(6.0, 500, 0, 0.3)
    g = SolverGrid(6.0, 600, 3, 0.3)
    assert g.dx == pytest.approx(0.01)
    np.testing.assert_allclose(g.c_levels, [0.3, 0.2, 0.1, 0.0], atol=1e-15)
    assert g.c_levels[-1] == 0.0 and g.x[-1] == 6.0


def test_default_truncation_and_guard_checks(paper):
    p, d = paper
    g = SolverGrid.default(p, d)
    assert g.x_max == pytest.approx(max(3 * d.y0, 2 * d.x_infty, 20 * p.sigma**2 / p.mu))
    assert (g.nx, g.nc) == (4000, 300)
    with pytest.raises(ParameterError):
        SolverGrid(2.0, 400, 10, 0.3).check_against(p, d)


@pytest.mark.parametrize("b", [0.4, 1.0])
def test_level_zero_from_zero_obstacle_reproduces_g(b):
    p = paper_params(b)
    d = derive_constants(p)
    grid = SolverGrid(6.0, 2000, 1, p.cbar)
    g = boundary_value_g(p, d, grid.x)
    sol = solve_obstacle_level(np.zeros(grid.nx + 1), p.cbar, grid, p, d, right_value=g[-1])
    assert np.max(np.abs(sol.v - g)) < 5e-5
    # below y0 the optimal control is the minimum payout, above it the maximum
    assert np.all(sol.control[grid.x < d.y0 - 0.01] == b)
    assert np.all(sol.control[grid.x > d.y0 + 0.01] == 1.0)
    assert not sol.active.any()


def test_fully_active_obstacle_returns_it(paper):
    p, d = paper
    grid = SolverGrid(6.0, 600, 1, p.cbar)
    # the barrier super-solution already exceeds what any level can reach
    v_prev = barrier_value(p, d, grid.x)
    tol = SolverTolerances()
    sol = solve_obstacle_level(v_prev, 0.1, grid, p, d)
    scale = p.cbar / p.r
    assert np.max(np.abs(sol.v - v_prev)) <= 1e-6 * scale
    assert sol.active[1:-1].all()


def test_simple_regime_levels_match_closed_form():
    p = ModelParams(b=0.5, **FIGURE1)
    d = derive_constants(p)
    grid = SolverGrid(20.0, 1000, 20, p.cbar)
    s = solve_system(p, d, grid, force_recursion=True)
    exact = p.cbar / p.r * (1 - np.exp(-d.gamma * grid.x))
    assert np.max(np.abs(s.v - exact[None, :])) < 5e-4
    assert not s.closed_form


def test_simple_regime_short_circuits():
    p = ModelParams(b=0.5, **FIGURE1)
    s = solve_system(p)
    assert s.closed_form
    assert np.all(s.v == s.v[0])


def test_surface_invariants(coarse):
    p, d, s, _ = coarse
    scale = p.cbar / p.r
    tol_obstacle = SolverTolerances().resolved(p)["tol_obstacle"]
    assert np.all(s.v[:, 0] == 0)
    assert s.v.min() >= 0 and s.v.max() <= scale + 1e-10
    assert np.all(np.diff(s.v, axis=0) >= -tol_obstacle)
    assert s.vx.min() >= -1e-8
    np.testing.assert_allclose(s.v[0], boundary_value_g(p, d, s.x))
    assert np.all(s.v <= barrier_value(p, d, s.x)[None, :] + 1e-8)
    assert set(np.unique(s.active_d)) <= {p.b, 1.0}
    assert not s.obstacle_active[0].any()


def test_pde_complementarity(coarse):
    p, _, s, _ = coarse
    for i in range(1, s.grid.nc + 1):
        res = level_residual(s.v[i], s.c_levels[i], p, s.grid.dx)
        act = s.obstacle_active[i, 1:-1]
        assert np.max(np.abs(res[~act])) < 1e-8
        assert np.min(res[act], initial=0.0) > -1e-8


def test_gradient_dominance_on_rows(coarse):
    # v_i'(y) <= max(v_i'(x), 1) for y >= x, on grid columns
    _, _, s, _ = coarse
    vx = s.vx
    suffix_max = np.maximum.accumulate(vx[:, ::-1], axis=1)[:, ::-1]
    assert np.all(suffix_max <= np.maximum(vx, 1.0) + 1e-6)


def test_lipschitz_in_c_is_stable_under_refinement():
    u60 = solved(0.6, 1000, 60)[2].diagnostics["max_abs_u"]
    u120 = solved(0.6, 1000, 120)[2].diagnostics["max_abs_u"]
    assert 0 < u60 < 50
    assert abs(u120 - u60) <= 0.25 * u60


def test_b_zero_rows_all_equal_the_unconstrained_solution():
    # with b = 0 the floor vanishes, so every level is the bounded-rate problem
    p = paper_params(0.0)
    d = derive_constants(p)
    s = solve_system(p, d, SolverGrid.default(p, d, nx=1000, nc=20))
    g = boundary_value_g(p, d, s.x)
    # row 0 is analytic; the discrete rows agree with it to O(dx^2) and with each other
    assert np.max(np.abs(s.v - g[None, :])) < 5e-4
    assert np.max(np.abs(s.v[1:] - s.v[1][None, :])) < 1e-6 * p.cbar / p.r


def test_nonconvergence_carries_level(paper):
    p, d = paper
    grid = SolverGrid.default(p, d, nx=400, nc=5)
    with pytest.raises(NonConvergence) as info:
        solve_system(p, d, grid, tolerances=SolverTolerances(max_iter=1))
    assert info.value.level == 1


def test_level_input_validation(paper):
    p, d = paper
    grid = SolverGrid(6.0, 400, 1, p.cbar)
    with pytest.raises(ValueError):
        solve_obstacle_level(np.zeros(10), 0.1, grid, p, d)
    with pytest.raises(DomainError):
        solve_obstacle_level(np.zeros(401), 0.5, grid, p, d)


def test_interpolation(coarse):
    _, _, s, _ = coarse
    i, j = 7, 123
    assert surface_interpolate(s, s.x[j], s.c_levels[i]) == pytest.approx(s.v[i, j], abs=1e-14)
    c_mid = 0.5 * (s.c_levels[i] + s.c_levels[i + 1])
    mid = surface_interpolate(s, s.x[j], c_mid)
    assert min(s.v[i, j], s.v[i + 1, j]) - 1e-15 <= mid <= max(s.v[i, j], s.v[i + 1, j]) + 1e-15
    np.testing.assert_allclose(surface_interpolate(s, 0.0, np.array([0.0, 0.1, 0.3])), 0.0)
    with pytest.raises(DomainError):
        surface_interpolate(s, s.grid.x_max + 1, 0.1)
    with pytest.raises(DomainError):
        surface_interpolate(s, 1.0, 0.31)


def test_surface_is_read_only(coarse):
    _, _, s, _ = coarse
    with pytest.raises(ValueError):
        s.v[1, 1] = 0.0


def test_closed_form_surface_shape(paper):
    q = ModelParams(b=0.5, **FIGURE1)
    e = derive_constants(q)
    grid = SolverGrid(20.0, 200, 4, q.cbar)
    s = closed_form_surface(q, e, grid)
    assert s.v.shape == (5, 201)
    assert s.diagnostics["max_obstacle_violation"] == 0.0

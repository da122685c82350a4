"""Optimal dividend payout under a drawdown constraint on the payout rate.

The surplus follows ``dX = (mu - C) dt + sigma dW`` until ruin; the payout
rate ``C`` must stay in ``[b M, cbar]`` where ``M`` is its running maximum.
The package computes the value function ``V(x, c)`` by a level recursion of
obstacle problems, extracts the free boundaries, and checks the result against
closed forms, Monte Carlo and a brute-force dynamic program.
"""
from .boundaries import (
    FreeBoundaries,
    equivalent_max_rate,
    equivalent_min_rate,
    extract_boundaries,
    extract_converting_boundary,
    extract_switching_boundary,
)
from .estimator import DrawdownDividendSolver, solve_guarded
from .exceptions import (
    AdmissibilityError,
    ConfigError,
    DomainError,
    DrawdownError,
    NoRoot,
    NonConvergence,
    NotFound,
    ObstacleViolation,
    ParameterError,
    RegimeError,
)
from .model import (
    DerivedConstants,
    ModelParams,
    Regime,
    barrier_value,
    boundary_value_g,
    classify_regime,
    derive_constants,
    simple_case_value,
)
from .oracle import DPInstance, compare_surfaces, value_iteration
from .simulate import SimConfig, SimOutcome, simulate_boundary_case, simulate_comparison, simulate_optimal
from .solver import SolverGrid, SolverTolerances, ValueSurface, solve_obstacle_level, solve_system, surface_interpolate

__version__ = "0.1.0"

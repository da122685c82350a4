import functools

import pytest

from drawdown_dividends.boundaries import extract_boundaries
from drawdown_dividends.model import ModelParams, derive_constants
from drawdown_dividends.solver import SolverGrid, solve_system

PAPER = dict(mu=0.3, sigma=0.3, r=0.05, cbar=0.3)
FIGURE1 = dict(mu=0.1, sigma=0.8, r=0.08, cbar=0.1)


def paper_params(b=0.6):
    return ModelParams(b=b, **PAPER)


@functools.lru_cache(maxsize=None)
def solved(b=0.6, nx=1000, nc=60):
    """Cached (params, constants, surface, boundaries) on a coarse grid."""
    p = paper_params(b)
    d = derive_constants(p)
    s = solve_system(p, d, SolverGrid.default(p, d, nx=nx, nc=nc))
    return p, d, s, extract_boundaries(s)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""

    def emit(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        _CRITERIA[str(n)] = line
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_CRITERIA, key=lambda k: (int(k.rstrip("ab")), k)):
            terminalreporter.write_line(_CRITERIA[key])


@pytest.fixture
def paper():
    p = paper_params()
    return p, derive_constants(p)


@pytest.fixture
def coarse():
    return solved()

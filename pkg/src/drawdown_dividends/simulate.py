"""Monte Carlo evaluation of feedback payout strategies.

Every strategy simulated here has the same shape: the running maximum ``M``
is a nondecreasing step function of the running maximum of the surplus, and
the payout is ``(low + (1 - low) 1{X >= threshold(M)}) * M``.  The optimal
strategy, the boundary-case strategy and the comparison heuristics differ only
in the tables passed to one compiled kernel.

The surplus follows the Euler chain ``X_{n+1} = X_n + (mu - C_n) dt +
sigma sqrt(dt) Z_n`` with ruin checked at step ends and, optionally, a
Brownian-bridge crossing test inside each step.  While a path is far from
every threshold (zero, the payout switch and the next breakpoint of ``M``) the
control is constant, so ``m`` consecutive steps are drawn as one Gaussian
increment with the same law.  ``m`` is chosen so that reaching a threshold in
between has probability below ``Phi(-8)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numba
import numpy as np

from .boundaries import FreeBoundaries, equivalent_max_rate_table
from .exceptions import AdmissibilityError, ConfigError
from .model import DerivedConstants, ModelParams, Regime
from .solver import ValueSurface

__all__ = [
    "SimConfig",
    "SimOutcome",
    "StrategyTables",
    "step_optimal",
    "optimal_tables",
    "boundary_tables",
    "comparison_tables",
    "simulate_tables",
    "simulate_optimal",
    "simulate_boundary_case",
    "simulate_comparison",
]

_BLOCK = 1024
_NSIGMA = 8.0


@dataclass(frozen=True)
class SimConfig:
    x0: float
    c0: float
    dt: float = 1e-3
    horizon: float | None = None
    n_paths: int = 10_000
    seed: int = 0
    bridge: bool = True
    tail_tol: float = 1e-5
    trace_paths: int = 0

    def validate(self, p: ModelParams) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.n_paths < 1:
            raise ConfigError(f"n_paths must be at least 1, got {self.n_paths}")
        if self.x0 < 0:
            raise ConfigError(f"x0 must be nonnegative, got {self.x0}")
        if not 0 <= self.c0 <= p.cbar:
            raise ConfigError(f"c0 must lie in [0, {p.cbar}], got {self.c0}")
        if self.horizon is not None and self.horizon < 100.0 / p.r:
            raise ConfigError(f"horizon must be at least 100/r = {100.0 / p.r:g}")
        if not 0 < self.tail_tol < 1:
            raise ConfigError("tail_tol must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def effective_horizon(self, p: ModelParams) -> float:
        """Simulated time: the horizon, cut where ``exp(-r t)`` drops below ``tail_tol``.

        The discarded tail contributes at most ``tail_tol * cbar / r``.
        """
        horizon = 100.0 / p.r if self.horizon is None else self.horizon
        return min(horizon, -math.log(self.tail_tol) / p.r)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SimOutcome:
    estimate: float
    stderr: float
    ruin_fraction: float
    mean_ruin_time: float
    n_paths: int

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "ruin_fraction": self.ruin_fraction,
            "mean_ruin_time": self.mean_ruin_time,
        }


@dataclass(frozen=True)
class StrategyTables:
    """Feedback strategy in table form.

    ``M = rates[k]`` while the running maximum of ``X`` lies in
    ``[breaks[k], breaks[k+1])``; the payout is ``M`` when ``X >= thresholds[k]``
    and ``low * M`` otherwise.
    """

    breaks: np.ndarray
    rates: np.ndarray
    thresholds: np.ndarray
    low: float

    def __post_init__(self):
        if not (len(self.breaks) == len(self.rates) == len(self.thresholds) >= 1):
            raise ValueError("strategy tables must have equal nonzero length")
        if np.any(np.diff(self.rates) < 0) or np.any(np.diff(self.breaks) <= 0):
            raise ValueError("rates must be nondecreasing over increasing breakpoints")


def step_optimal(x: float, M: float, fb: FreeBoundaries, b: float) -> float:
    """Optimal payout rate at surplus ``x`` and running maximum ``M``."""
    if b >= 1.0:
        return float(M)
    return float((b + (1.0 - b) * (x >= fb.Y_at(M))) * M)


def _compress(x, rates):
    keep = np.concatenate(([True], np.diff(rates) > 0))
    return x[keep], rates[keep]


def optimal_tables(p: ModelParams, s: ValueSurface, fb: FreeBoundaries, c0: float) -> StrategyTables:
    """``M = xi(max X, c0)`` on grid cells; the rate of a cell is taken at its left node."""
    xi = equivalent_max_rate_table(s, c0, fb.eps_fb)
    breaks, rates = _compress(s.grid.x, xi)
    breaks = breaks.copy()
    breaks[0] = 0.0
    return StrategyTables(breaks, rates, fb.Y_at(rates), p.b)


def boundary_tables(p: ModelParams, d: DerivedConstants) -> StrategyTables:
    """Running maximum pinned at ``cbar`` with the closed-form switch point ``y0``."""
    y0 = 0.0 if d.regime is Regime.SIMPLE else d.y0
    return StrategyTables(np.array([0.0]), np.array([p.cbar]), np.array([y0]), p.b)


def comparison_tables(p: ModelParams, d: DerivedConstants, tag: str, c0: float, rate=None) -> StrategyTables:
    """Heuristic baselines.

    ``constant_rate``
        pay ``rate`` forever (admissible iff ``b * max(c0, rate) <= rate <= cbar``);
    ``ratchet_greedy``
        pay the running maximum, ratcheting it to ``cbar`` once ``X`` first reaches ``y0``;
    ``unconstrained_barrier``
        pay the minimum ``b * M`` below ``y0`` and ``cbar`` from the first time
        ``X`` reaches ``y0`` on (the boundary-case rule applied from any start).
    """
    y0 = d.y0 if d.y0 is not None else 0.0
    if tag == "constant_rate":
        if rate is None:
            raise AdmissibilityError("constant_rate needs a rate")
        M = max(c0, rate)
        if not (p.b * M - 1e-15 <= rate <= p.cbar):
            raise AdmissibilityError(
                f"constant rate {rate} violates b*M={p.b * M:g} <= C <= cbar={p.cbar:g}"
            )
        low = rate / M if M > 0 else 1.0
        return StrategyTables(np.array([0.0]), np.array([M]), np.array([np.inf]), low)
    if tag in ("ratchet_greedy", "unconstrained_barrier"):
        if y0 > 0 and c0 < p.cbar:
            breaks, rates = np.array([0.0, y0]), np.array([c0, p.cbar])
        else:
            breaks, rates = np.array([0.0]), np.array([p.cbar if y0 == 0 else c0])
        if tag == "ratchet_greedy":
            return StrategyTables(breaks, rates, np.zeros_like(rates), 1.0)
        return StrategyTables(breaks, rates, np.full_like(rates, y0), p.b)
    raise ConfigError(f"unknown strategy {tag!r}")


@numba.njit(cache=True)
def _simulate_block(
    gen, n_paths, x0, mu, sigma, r, dt, n_steps, breaks, rates, thresholds, low,
    bridge, payout, ruin_time, trace, trace_paths,
):
    n_levels = breaks.size
    disc_dt = math.exp(-r * dt)
    trace_row = 0
    for path in range(n_paths):
        X = x0
        runmax = x0
        k = 0
        while k + 1 < n_levels and runmax >= breaks[k + 1]:
            k += 1
        acc = 0.0
        step = 0
        tau = -1.0
        if X <= 0.0:
            tau = 0.0
        while tau < 0.0 and step < n_steps:
            M = rates[k]
            thr = thresholds[k]
            C = M if X >= thr else low * M
            drift = mu - C
            t = step * dt
            if path < trace_paths and trace_row < trace.shape[0]:
                trace[trace_row, 0] = path
                trace[trace_row, 1] = t
                trace[trace_row, 2] = X
                trace[trace_row, 3] = M
                trace[trace_row, 4] = C
                trace_row += 1
            dist = X
            if math.isfinite(thr):
                dist = min(dist, abs(X - thr))
            if k + 1 < n_levels:
                dist = min(dist, breaks[k + 1] - X)
            m = 1
            if dist > 0.0:
                # largest h with |drift| h + NSIGMA sigma sqrt(h) <= dist
                a = abs(drift)
                ns = _NSIGMA * sigma
                if a > 0.0:
                    root = (-ns + math.sqrt(ns * ns + 4.0 * a * dist)) / (2.0 * a)
                else:
                    root = dist / ns
                m_f = min(root * root / dt, float(n_steps - step))
                if m_f > 1.0:
                    m = int(m_f)
            h = m * dt
            if m == 1:
                acc += math.exp(-r * t) * C * dt
            else:
                acc += math.exp(-r * t) * C * dt * (1.0 - disc_dt**m) / (1.0 - disc_dt)
            Xn = X + drift * h + sigma * math.sqrt(h) * gen.standard_normal()
            if Xn <= 0.0:
                tau = t + h
            elif bridge:
                if gen.random() < math.exp(-2.0 * X * Xn / (sigma * sigma * h)):
                    tau = t + h
            X = Xn
            step += m
            if X > runmax:
                runmax = X
                while k + 1 < n_levels and runmax >= breaks[k + 1]:
                    k += 1
        payout[path] = acc
        ruin_time[path] = tau
    return trace_row


def _block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def simulate_tables(p: ModelParams, tables: StrategyTables, cfg: SimConfig, return_trace: bool = False):
    """Run the kernel over all paths; blocks of paths own independent RNG streams."""
    cfg.validate(p)
    n_steps = int(math.ceil(cfg.effective_horizon(p) / cfg.dt))
    payout = np.empty(cfg.n_paths)
    ruin_time = np.empty(cfg.n_paths)
    trace_cap = cfg.trace_paths * 100_000 if return_trace else 0
    trace = np.zeros((trace_cap, 5))
    rows = 0
    breaks = np.ascontiguousarray(tables.breaks, dtype=float)
    rates = np.ascontiguousarray(tables.rates, dtype=float)
    thresholds = np.ascontiguousarray(tables.thresholds, dtype=float)
    for block, start in enumerate(range(0, cfg.n_paths, _BLOCK)):
        stop = min(start + _BLOCK, cfg.n_paths)
        gen = _block_generator(cfg.seed, block)
        block_trace = trace[rows:] if block == 0 else trace[:0]
        used = _simulate_block(
            gen, stop - start, float(cfg.x0), p.mu, p.sigma, p.r, cfg.dt, n_steps,
            breaks, rates, thresholds, float(tables.low), bool(cfg.bridge),
            payout[start:stop], ruin_time[start:stop], block_trace,
            cfg.trace_paths if block == 0 else 0,
        )
        rows += used
    ruined = ruin_time >= 0
    outcome = SimOutcome(
        estimate=float(np.mean(payout)),
        stderr=float(np.std(payout, ddof=1) / math.sqrt(cfg.n_paths)) if cfg.n_paths > 1 else 0.0,
        ruin_fraction=float(np.mean(ruined)),
        mean_ruin_time=float(np.mean(ruin_time[ruined])) if ruined.any() else float("nan"),
        n_paths=cfg.n_paths,
    )
    if return_trace:
        return outcome, payout, trace[:rows]
    return outcome


def simulate_optimal(
    p: ModelParams, d: DerivedConstants, fb: FreeBoundaries, surface: ValueSurface, cfg: SimConfig
) -> SimOutcome:
    """Simulate the optimal feedback strategy built from a solved surface."""
    cfg.validate(p)
    if cfg.x0 > surface.grid.x_max / 2:
        raise ConfigError(f"x0 must not exceed x_max/2 = {surface.grid.x_max / 2:g}")
    return simulate_tables(p, optimal_tables(p, surface, fb, cfg.c0), cfg)


def simulate_boundary_case(p: ModelParams, d: DerivedConstants, cfg: SimConfig) -> SimOutcome:
    """Simulate the closed-form strategy with the running maximum fixed at ``cbar``."""
    return simulate_tables(p, boundary_tables(p, d), cfg)


def simulate_comparison(
    p: ModelParams, d: DerivedConstants, strategy_tag: str, cfg: SimConfig, rate: float | None = None
) -> SimOutcome:
    return simulate_tables(p, comparison_tables(p, d, strategy_tag, cfg.c0, rate), cfg)

"""Brute-force dynamic-programming oracle.

A discrete-time Markov decision process that shares nothing with the level
recursion of :mod:`~drawdown_dividends.solver`:

* the surplus lives on the lattice ``x_j = j h`` (``x_0 = 0`` is ruin) and
  moves by a trinomial step whose mean and variance match the diffusion over
  one period ``dt``; the top node is reflecting;
* the running maximum takes ``n_levels`` equally spaced values in ``[0, cbar]``;
* in each period the controller picks a payout ``a`` from a fixed action
  grid (which contains every floor ``b M``), subject to ``b M <= a <= cbar``;
  paying above ``M`` ratchets ``M`` to the smallest level at or above ``a``;
* reward ``a dt`` is collected at the start of the period and the future is
  discounted by ``exp(-r dt)``.

The ratchet rounds up, so oracle strategies respect the drawdown constraint.
The remaining discretization errors (lattice, period length, level spacing)
shrink with ``dx_dp`` and ``dt``.  The Bellman equation is solved by Howard
policy iteration (exact evaluation with a sparse solve), or by plain value
iteration on small instances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import ConfigError, NonConvergence
from .model import ModelParams
from .solver import ValueSurface, surface_interpolate

__all__ = ["DPInstance", "DPResult", "bellman_update", "value_iteration", "compare_surfaces"]


@dataclass(frozen=True)
class DPInstance:
    params: ModelParams
    dx_dp: float = 0.05
    dt: float = 1e-3
    n_levels: int = 30
    x_max: float = 10.0
    action_refine: int = 8

    def __post_init__(self):
        if self.dx_dp <= 0 or self.dt <= 0 or self.x_max <= 0:
            raise ConfigError("dx_dp, dt and x_max must be positive")
        if self.n_levels < 2 or self.action_refine < 1:
            raise ConfigError("need n_levels >= 2 and action_refine >= 1")
        if self.x_max / self.dx_dp < 2:
            raise ConfigError("lattice needs at least two interior nodes")
        p = self.params
        worst = max(abs(p.mu), abs(p.mu - p.cbar))
        spread = (p.sigma**2 * self.dt + (worst * self.dt) ** 2) / self.dx_dp**2
        if spread + worst * self.dt / self.dx_dp > 1.0:
            raise ConfigError(
                "trinomial probabilities leave [0, 1]; reduce dt or increase dx_dp"
            )

    @property
    def n_x(self) -> int:
        return int(round(self.x_max / self.dx_dp)) + 1

    @property
    def x(self) -> np.ndarray:
        return self.dx_dp * np.arange(self.n_x)

    @property
    def m_levels(self) -> np.ndarray:
        return np.linspace(0.0, self.params.cbar, self.n_levels)

    @property
    def actions(self) -> np.ndarray:
        """Uniform grid on ``[0, cbar]`` plus the floor ``b m`` of every level."""
        grid = np.linspace(0.0, self.params.cbar, (self.n_levels - 1) * self.action_refine + 1)
        return np.unique(np.concatenate([grid, self.params.b * self.m_levels]))

    @property
    def discount(self) -> float:
        return math.exp(-self.params.r * self.dt)

    def transition_probs(self):
        """``(p_down, p_stay, p_up)`` for every action (arrays over actions)."""
        p, h, dt = self.params, self.dx_dp, self.dt
        drift = (p.mu - self.actions) * dt
        second = (p.sigma**2 * dt + drift**2) / h**2
        up = 0.5 * (second + drift / h)
        down = 0.5 * (second - drift / h)
        return down, 1.0 - up - down, up

    def next_level(self) -> np.ndarray:
        """``L[m, k]``: level index after playing action ``k`` at level ``m``."""
        levels = self.m_levels
        ceil_idx = np.searchsorted(levels, self.actions - 1e-12 * self.params.cbar, side="left")
        ceil_idx = np.minimum(ceil_idx, self.n_levels - 1)
        return np.maximum(np.arange(self.n_levels)[:, None], ceil_idx[None, :])

    def allowed(self) -> np.ndarray:
        """``A[m, k]``: action ``k`` respects the drawdown floor at level ``m``."""
        floor = self.params.b * self.m_levels
        return self.actions[None, :] >= floor[:, None] - 1e-12 * self.params.cbar


@dataclass
class DPResult:
    instance: DPInstance
    V: np.ndarray  # (n_levels, n_x), rows in increasing level order
    policy: np.ndarray  # action index per state, -1 at ruin
    iterations: int
    residual: float
    diagnostics: dict = field(default_factory=dict)

    def value(self, x, c):
        """Bilinear interpolation in ``(x, M)``."""
        inst = self.instance
        x = np.asarray(x, dtype=float)
        c = np.asarray(c, dtype=float)
        x, c = np.broadcast_arrays(x, c)
        tx = np.clip(x / inst.dx_dp, 0, inst.n_x - 1)
        tm = np.clip(c / inst.params.cbar * (inst.n_levels - 1), 0, inst.n_levels - 1)
        j = np.minimum(tx.astype(int), inst.n_x - 2)
        i = np.minimum(tm.astype(int), inst.n_levels - 2)
        fx, fm = tx - j, tm - i
        V = self.V
        out = (
            (1 - fm) * ((1 - fx) * V[i, j] + fx * V[i, j + 1])
            + fm * ((1 - fx) * V[i + 1, j] + fx * V[i + 1, j + 1])
        )
        return float(out) if out.ndim == 0 else out


def _expected_next(inst: DPInstance, V: np.ndarray, probs) -> np.ndarray:
    """``E[V(X', m') | x_j, action k]`` for every ``(k, m', j)``; ruin rows excluded later."""
    down, stay, up = probs
    upper = np.concatenate([V[:, 1:], V[:, -1:]], axis=1)  # reflect at the top node
    lower = np.concatenate([V[:, :1], V[:, :-1]], axis=1)
    return (
        down[:, None, None] * lower[None]
        + stay[:, None, None] * V[None]
        + up[:, None, None] * upper[None]
    )


def _q_values(inst: DPInstance, V, probs, nxt, allowed):
    ev = _expected_next(inst, V, probs)  # (K, n_levels, n_x)
    k_idx = np.arange(inst.actions.size)[None, :]
    q = inst.actions[None, :, None] * inst.dt + inst.discount * ev[k_idx, nxt, :]  # (n_levels, K, n_x)
    q[~allowed] = -np.inf
    return q


def bellman_update(inst: DPInstance, V: np.ndarray):
    """One application of the Bellman operator; returns ``(TV, greedy policy)``."""
    q = _q_values(inst, V, inst.transition_probs(), inst.next_level(), inst.allowed())
    policy = np.argmax(q, axis=1)
    TV = np.take_along_axis(q, policy[:, None, :], axis=1)[:, 0, :]
    TV[:, 0] = 0.0
    policy[:, 0] = -1
    return TV, policy


def _evaluate_policy(inst: DPInstance, policy: np.ndarray) -> np.ndarray:
    """Solve ``V = R + beta P V`` exactly for a stationary policy."""
    n_l, n_x = inst.n_levels, inst.n_x
    down, stay, up = inst.transition_probs()
    nxt = inst.next_level()
    m_idx, j_idx = np.meshgrid(np.arange(n_l), np.arange(1, n_x), indexing="ij")
    k = policy[:, 1:]
    target_m = nxt[m_idx, k]
    src = (m_idx * n_x + j_idx).ravel()
    j_up = np.minimum(j_idx + 1, n_x - 1)
    rows, cols, vals = [], [], []
    for jj, pr in ((j_idx - 1, down[k]), (j_idx, stay[k]), (j_up, up[k])):
        keep = (jj > 0).ravel()  # transitions into ruin contribute nothing
        rows.append(src[keep])
        cols.append((target_m * n_x + jj).ravel()[keep])
        vals.append(pr.ravel()[keep])
    n = n_l * n_x
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    reward = np.zeros(n)
    reward[src] = inst.actions[k].ravel() * inst.dt
    A = sp.identity(n, format="csr") - inst.discount * P
    # ruin states keep the identity row with zero reward
    V = spla.spsolve(A.tocsc(), reward)
    return V.reshape(n_l, n_x)


def value_iteration(
    inst: DPInstance,
    method: str = "howard",
    tol: float | None = None,
    max_iter: int | None = None,
    V0: np.ndarray | None = None,
) -> DPResult:
    """Solve the oracle's Bellman equation.

    ``method="howard"`` alternates exact policy evaluation and greedy
    improvement until the policy repeats; ``method="jacobi"`` iterates the
    Bellman operator until successive iterates differ by less than ``tol``
    (slow for small ``r dt``; meant for tiny hand-checkable instances).
    """
    p = inst.params
    tol = 1e-10 * p.cbar / p.r if tol is None else tol
    V = np.zeros((inst.n_levels, inst.n_x)) if V0 is None else np.array(V0, dtype=float)
    if method == "jacobi":
        max_iter = 10_000_000 if max_iter is None else max_iter
        delta = math.inf
        for it in range(1, max_iter + 1):
            TV, policy = bellman_update(inst, V)
            delta = float(np.max(np.abs(TV - V)))
            V = TV
            if delta <= tol:
                break
        else:
            raise NonConvergence(max_iter, delta)
        # the fixed point is within delta * beta / (1 - beta) of V
        return DPResult(inst, V, policy, it, delta)
    if method != "howard":
        raise ConfigError(f"unknown method {method!r}")

    max_iter = 200 if max_iter is None else max_iter
    _, policy = bellman_update(inst, V)
    for it in range(1, max_iter + 1):
        V = _evaluate_policy(inst, policy)
        q = _q_values(inst, V, inst.transition_probs(), inst.next_level(), inst.allowed())
        best = np.max(q, axis=1)
        current = np.take_along_axis(q, np.maximum(policy, 0)[:, None, :], axis=1)[:, 0, :]
        # switch only on a strict improvement so that ties cannot cycle
        improve = best > current + 1e-13 * p.cbar / p.r
        improve[:, 0] = False
        if not improve.any():
            TV = best
            TV[:, 0] = 0.0
            residual = float(np.max(np.abs(TV - V)))
            return DPResult(inst, V, policy, it, residual)
        policy = np.where(improve, np.argmax(q, axis=1), policy)
    raise NonConvergence(max_iter, float("nan"))


def compare_surfaces(dp: DPResult, surface: ValueSurface, x_range=(0.5, 5.0)) -> dict:
    """Relative gap between oracle and solver on oracle nodes with ``x`` in ``x_range``."""
    inst = dp.instance
    x = inst.x
    mask = (x >= x_range[0]) & (x <= x_range[1]) & (x <= surface.grid.x_max)
    if not mask.any():
        raise ConfigError("no oracle nodes inside the comparison range")
    xs = x[mask]
    levels = inst.m_levels
    v_solver = surface_interpolate(surface, xs[None, :], levels[:, None])
    v_dp = dp.V[:, mask]
    rel = np.abs(v_dp - v_solver) / np.abs(v_solver)
    worst = np.unravel_index(np.argmax(rel), rel.shape)
    return {
        "max_rel_gap": float(rel.max()),
        "mean_rel_gap": float(rel.mean()),
        "worst_node": {"x": float(xs[worst[1]]), "c": float(levels[worst[0]])},
        "max_signed_gap": float(np.max(v_dp - v_solver)),
        "min_signed_gap": float(np.min(v_dp - v_solver)),
        "residual": dp.residual,
    }

"""Command-line front end.

    drawdown-dividends solve --mu 0.3 --sigma 0.3 --r 0.05 --cbar 0.3 --b 0.6 --out run/

Subcommands write into ``--out``:

``solve``       surface.csv, boundaries.csv, meta.json
``boundaries``  boundaries.csv, meta.json
``simulate``    sim.json, meta.json (and trace.csv with ``--trace k``)
``verify``      verify.json, meta.json
``figures``     one sub-directory per b in {0.4, 0.6, 0.8, 1.0} plus comparison.csv

Exit status: 0 when every invariant gate passes, 1 on a module error or a
failed gate (with a JSON error report), 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import platform
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .boundaries import FreeBoundaries
from .estimator import solve_guarded
from .exceptions import ConfigError, DrawdownError
from .io import read_config, to_json, write_csv, write_json
from .model import ModelParams, Regime, boundary_value_g, derive_constants
from .oracle import DPInstance, compare_surfaces, value_iteration
from .simulate import SimConfig, boundary_tables, comparison_tables, optimal_tables, simulate_tables
from .solver import SolverGrid, SolverTolerances, ValueSurface, surface_interpolate

__all__ = ["RunConfig", "build_parser", "run", "main"]

EXPERIMENTS = ("solve", "boundaries", "simulate", "verify", "figures")
STRATEGIES = ("optimal", "boundary", "constant_rate", "ratchet_greedy", "unconstrained_barrier")
FIGURE_BS = (0.4, 0.6, 0.8, 1.0)
GAP_TOLERANCE = 0.05

# option name -> converter; doubles as the whitelist for config-file keys
_OPTIONS = {
    "mu": float, "sigma": float, "r": float, "cbar": float, "b": float,
    "nx": int, "nc": int, "xmax": float, "tol": float,
    "x0": float, "c0": float, "dt": float, "horizon": float, "paths": int, "seed": int,
    "strategy": str, "rate": float, "trace": int,
    "dx_dp": float, "dp_dt": float, "levels": int, "dp_xmax": float,
    "out": str,
}
_REQUIRED = ("mu", "sigma", "r", "cbar", "b")


@dataclass
class RunConfig:
    experiment: str
    params: ModelParams
    grid: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    out: Path = Path("out")

    def echo(self) -> dict:
        return {
            "experiment": self.experiment,
            "params": self.params.to_dict(),
            "grid": dict(self.grid),
            "sim": dict(self.sim),
            "verify": dict(self.verify),
        }


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    model = common.add_argument_group("model")
    for name in _REQUIRED:
        model.add_argument(f"--{name}", type=str, default=None)
    num = common.add_argument_group("grid")
    num.add_argument("--nx", type=str, default=None, help="space intervals (default 4000)")
    num.add_argument("--nc", type=str, default=None, help="rate levels (default 300)")
    num.add_argument("--xmax", type=str, default=None, help="truncation point (default from the model)")
    num.add_argument("--tol", type=str, default=None, help="fixed-point tolerance per level")
    sim = common.add_argument_group("simulation")
    sim.add_argument("--x0", type=str, default=None)
    sim.add_argument("--c0", type=str, default=None, help="initial running maximum (default cbar)")
    sim.add_argument("--dt", type=str, default=None)
    sim.add_argument("--horizon", type=str, default=None)
    sim.add_argument("--paths", type=str, default=None)
    sim.add_argument("--seed", type=str, default=None)
    sim.add_argument("--strategy", type=str, default=None, help="|".join(STRATEGIES))
    sim.add_argument("--rate", type=str, default=None, help="payout of constant_rate")
    sim.add_argument("--trace", type=str, default=None, help="write the first k paths to trace.csv")
    ver = common.add_argument_group("oracle")
    ver.add_argument("--dx-dp", dest="dx_dp", type=str, default=None)
    ver.add_argument("--dp-dt", dest="dp_dt", type=str, default=None)
    ver.add_argument("--levels", type=str, default=None)
    ver.add_argument("--dp-xmax", dest="dp_xmax", type=str, default=None)
    common.add_argument("--out", type=str, default=None, help="output directory (default ./out)")
    common.add_argument("--config", type=str, default=None, help="key=value or JSON file; flags win")

    parser = argparse.ArgumentParser(prog="drawdown-dividends", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common])
    return parser


def _convert(key, value):
    conv = _OPTIONS[key]
    try:
        if conv is int and isinstance(value, str):
            return int(value, 10)
        if conv is int and isinstance(value, float):
            if not value.is_integer():
                raise ValueError
            return int(value)
        return conv(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {key}: {value!r}") from None


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        for key, value in read_config(args.config).items():
            if key not in _OPTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value
    for key in _OPTIONS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    values = {k: _convert(k, v) for k, v in values.items()}
    experiment = args.experiment
    if experiment == "figures":
        # the experiment sweeps b itself
        values["b"] = FIGURE_BS[0]
    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ConfigError("missing required parameters: " + ", ".join(f"--{k}" for k in missing))
    params = {k: values[k] for k in _REQUIRED}
    p = ModelParams(**params)
    grid = {k: values[k] for k in ("nx", "nc", "xmax", "tol") if k in values}
    sim = {k: values[k] for k in ("x0", "c0", "dt", "horizon", "paths", "seed", "strategy", "rate", "trace") if k in values}
    verify = {k: values[k] for k in ("dx_dp", "dp_dt", "levels", "dp_xmax") if k in values}
    if experiment == "simulate":
        if "x0" not in sim:
            raise ConfigError("simulate needs --x0")
        if sim.get("strategy", "optimal") not in STRATEGIES:
            raise ConfigError(f"unknown strategy {sim['strategy']!r}; choose from {', '.join(STRATEGIES)}")
    return RunConfig(experiment, p, grid, sim, verify, Path(values.get("out", "out")))


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "numba", "scikit-learn"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _solve(p: ModelParams, grid_opts: dict):
    d = derive_constants(p)
    grid = SolverGrid.default(
        p, d, nx=grid_opts.get("nx", 4000), nc=grid_opts.get("nc", 300), x_max=grid_opts.get("xmax")
    )
    tolerances = SolverTolerances(tol_fix=grid_opts.get("tol"))
    s, fb, doublings = solve_guarded(p, d, grid, tolerances=tolerances)
    return d, s, fb, doublings, tolerances.resolved(p)


def _surface_gates(s: ValueSurface, fb: FreeBoundaries, tol: dict) -> dict:
    p, diag = s.params, s.diagnostics
    scale = p.cbar / p.r
    tol_residual = 1e-6 * p.cbar
    gates = {
        "value_bounds": diag["min_value"] >= -1e-10 and diag["max_value"] <= scale + 1e-10,
        "obstacle": diag["max_obstacle_violation"] <= tol["tol_obstacle"],
        "vx_nonnegative": diag["min_vx"] >= -1e-8,
        "complementarity": diag["pde_residual_inactive"] <= tol_residual
        and diag["pde_residual_active_min"] >= -tol_residual,
    }
    quad = s.constants.quadratic_residuals(p)
    gates["quadratic_residuals"] = max(abs(v) for v in quad.values()) <= 1e-12 * max(1.0, p.r, p.mu**2 / p.sigma**2)
    if s.constants.regime is Regime.COMPLICATED:
        fdiag = fb.diagnostics
        gates["Y_below_X"] = bool(np.all(fb.Y_of_c > 0)) and fdiag["min_X_minus_Y"] > 0
        gates["Y_top_at_y0"] = abs(fdiag["Y_top_minus_y0"]) <= 2 * s.grid.dx
        gates["vx_at_X"] = fdiag["max_vx_at_X"] <= 1.0 + 1e-6
    return {k: bool(v) for k, v in gates.items()}


def _solve_meta(cfg: RunConfig, d, s, fb, doublings, tol) -> dict:
    return {
        "config": cfg.echo(),
        "versions": _versions(),
        "regime": str(d.regime),
        "constants": d.to_dict(),
        "quadratic_residuals": d.quadratic_residuals(s.params),
        "grid": s.grid.to_dict(),
        "tolerances": tol,
        "closed_form": s.closed_form,
        "x_max_doublings": doublings,
        "surface_diagnostics": dict(s.diagnostics),
        "boundary_diagnostics": dict(fb.diagnostics),
        "iterations": {"max": int(s.iterations.max()), "total": int(s.iterations.sum())},
    }


def _write_surface(path, s: ValueSurface) -> None:
    grid = s.grid
    xx, cc = np.meshgrid(grid.x, grid.c_levels)
    write_csv(
        path,
        ["x", "c", "v", "vx", "obstacle_active", "d"],
        [xx.ravel(), cc.ravel(), s.v.ravel(), s.vx.ravel(), s.obstacle_active.ravel(), s.active_d.ravel()],
    )


def _write_boundaries(path, fb: FreeBoundaries) -> None:
    write_csv(path, ["c", "X", "Y"], [fb.c_levels, fb.X_of_c, fb.Y_of_c])


class GateFailure(DrawdownError):
    def __init__(self, gates):
        self.gates = gates
        failed = sorted(k for k, ok in gates.items() if not ok)
        super().__init__("invariant gates failed: " + ", ".join(failed))


def _finish(meta: dict, out: Path, gates: dict) -> None:
    meta["gates"] = gates
    write_json(out / "meta.json", meta)
    if not all(gates.values()):
        raise GateFailure(gates)


def _run_solve(cfg: RunConfig, write_surface: bool) -> None:
    d, s, fb, doublings, tol = _solve(cfg.params, cfg.grid)
    if s.closed_form:
        print("Simple regime: closed form")
    if write_surface:
        _write_surface(cfg.out / "surface.csv", s)
    _write_boundaries(cfg.out / "boundaries.csv", fb)
    _finish(_solve_meta(cfg, d, s, fb, doublings, tol), cfg.out, _surface_gates(s, fb, tol))


def _sim_config(p: ModelParams, opts: dict) -> SimConfig:
    kwargs = {"x0": opts["x0"], "c0": opts.get("c0", p.cbar)}
    for src, dst in (("dt", "dt"), ("horizon", "horizon"), ("paths", "n_paths"), ("seed", "seed"), ("trace", "trace_paths")):
        if src in opts:
            kwargs[dst] = opts[src]
    return SimConfig(**kwargs)


def _run_simulate(cfg: RunConfig) -> None:
    p = cfg.params
    sim = _sim_config(p, cfg.sim)
    sim.validate(p)
    strategy = cfg.sim.get("strategy", "optimal")
    meta = {"config": cfg.echo(), "versions": _versions(), "sim_config": sim.to_dict(),
            "effective_horizon": sim.effective_horizon(p)}
    d = derive_constants(p)
    meta["regime"] = str(d.regime)
    reference = None
    if strategy == "optimal":
        d, s, fb, doublings, tol = _solve(p, cfg.grid)
        if sim.x0 > s.grid.x_max / 2:
            raise ConfigError(f"x0 must not exceed x_max/2 = {s.grid.x_max / 2:g}")
        tables = optimal_tables(p, s, fb, sim.c0)
        reference = float(surface_interpolate(s, sim.x0, sim.c0))
        meta["grid"] = s.grid.to_dict()
    elif strategy == "boundary":
        tables = boundary_tables(p, d)
        reference = float(boundary_value_g(p, d, sim.x0))
    else:
        tables = comparison_tables(p, d, strategy, sim.c0, cfg.sim.get("rate"))
    if sim.trace_paths > 0:
        outcome, _, trace = simulate_tables(p, tables, sim, return_trace=True)
        write_csv(cfg.out / "trace.csv", ["path", "t", "X", "M", "C"],
                  [trace[:, 0].astype(int), trace[:, 1], trace[:, 2], trace[:, 3], trace[:, 4]])
    else:
        outcome = simulate_tables(p, tables, sim)
    write_json(cfg.out / "sim.json", outcome.to_dict())
    meta["reference_value"] = reference
    gates = {"payout_bound": outcome.estimate <= p.cbar / p.r + 3 * outcome.stderr}
    if reference is not None:
        meta["z_score"] = (outcome.estimate - reference) / outcome.stderr if outcome.stderr > 0 else None
    _finish(meta, cfg.out, gates)


def _run_verify(cfg: RunConfig) -> None:
    p = cfg.params
    d, s, fb, doublings, tol = _solve(p, cfg.grid)
    inst = DPInstance(
        p,
        dx_dp=cfg.verify.get("dx_dp", 0.05),
        dt=cfg.verify.get("dp_dt", 1e-3),
        n_levels=cfg.verify.get("levels", 30),
        x_max=cfg.verify.get("dp_xmax", 10.0),
    )
    dp = value_iteration(inst)
    report = compare_surfaces(dp, s)
    write_json(cfg.out / "verify.json", {k: report[k] for k in ("max_rel_gap", "mean_rel_gap", "worst_node", "residual")})
    meta = _solve_meta(cfg, d, s, fb, doublings, tol)
    meta["oracle"] = {
        "dx_dp": inst.dx_dp, "dt": inst.dt, "n_levels": inst.n_levels, "x_max": inst.x_max,
        "n_actions": int(inst.actions.size), "policy_iterations": dp.iterations, "report": report,
        "gap_tolerance": GAP_TOLERANCE,
    }
    gates = _surface_gates(s, fb, tol)
    gates["oracle_gap"] = report["max_rel_gap"] <= GAP_TOLERANCE
    _finish(meta, cfg.out, gates)


def b_monotonicity(curves: dict, slack: float) -> dict:
    """Adjacent-b comparison of sampled curves sharing the same levels."""
    bs = sorted(curves)
    out = {}
    for lo, hi in zip(bs, bs[1:]):
        diff = np.asarray(curves[hi]) - np.asarray(curves[lo])
        out[f"{lo:g}->{hi:g}"] = {"min_diff": float(diff.min()), "violations": int(np.sum(diff < -slack))}
    return out


def _run_figures(cfg: RunConfig) -> None:
    base = cfg.params.to_dict()
    X, Y, gates, sub_meta = {}, {}, {}, {}
    levels = None
    slack = 0.0
    for b in FIGURE_BS:
        p = ModelParams(**{**base, "b": b})
        d, s, fb, doublings, tol = _solve(p, cfg.grid)
        tag = f"b{b:g}"
        sub = cfg.out / tag
        sub.mkdir(parents=True, exist_ok=True)
        _write_boundaries(sub / "boundaries.csv", fb)
        # value-function panel: a coarse lattice is enough for a line plot
        sx = max(1, s.grid.nx // 200)
        sc = max(1, s.grid.nc // 30)
        xs, rows = s.grid.x[::sx], np.arange(0, s.grid.nc + 1, sc)
        xx, cc = np.meshgrid(xs, s.grid.c_levels[rows])
        write_csv(sub / "value.csv", ["x", "c", "v"], [xx.ravel(), cc.ravel(), s.v[rows][:, ::sx].ravel()])
        meta = _solve_meta(cfg, d, s, fb, doublings, tol)
        meta["config"]["params"] = p.to_dict()
        meta["gates"] = _surface_gates(s, fb, tol)
        write_json(sub / "meta.json", meta)
        for k, ok in meta["gates"].items():
            gates[f"{tag}:{k}"] = ok
        X[b], Y[b] = fb.X_of_c, fb.Y_of_c
        levels = fb.c_levels if levels is None else levels
        slack = max(slack, s.grid.dx)
        sub_meta[tag] = {"regime": str(d.regime), "y0": d.y0, "x_max": s.grid.x_max}
    header = ["c"] + [f"X_b{b:g}" for b in FIGURE_BS] + [f"Y_b{b:g}" for b in FIGURE_BS]
    write_csv(cfg.out / "comparison.csv", header, [levels] + [X[b] for b in FIGURE_BS] + [Y[b] for b in FIGURE_BS])
    meta = {
        "config": cfg.echo(),
        "versions": _versions(),
        "runs": sub_meta,
        # observed properties, reported rather than gated: neither is proved
        "observations": {
            "X_nondecreasing_in_b": b_monotonicity(X, slack),
            "Y_nondecreasing_in_b": b_monotonicity(Y, slack),
            "slack": slack,
        },
    }
    _finish(meta, cfg.out, gates)


def run(cfg: RunConfig) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg.experiment in ("solve", "boundaries"):
        _run_solve(cfg, write_surface=cfg.experiment == "solve")
    elif cfg.experiment == "simulate":
        _run_simulate(cfg)
    elif cfg.experiment == "verify":
        _run_verify(cfg)
    elif cfg.experiment == "figures":
        _run_figures(cfg)
    else:  # argparse restricts the choices; kept for programmatic callers
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    return 0


def _error_report(exc: Exception, code: int) -> dict:
    report = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, GateFailure):
        report["gates"] = exc.gates
    for attr in ("level", "iterations", "last_delta", "violation"):
        value = getattr(exc, attr, None)
        if value is not None:
            report[attr] = value
    return report


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on malformed flags
    try:
        cfg = config_from_args(args)
    except (ConfigError, DrawdownError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(to_json(_error_report(exc, 2)))
        return 2
    try:
        return run(cfg)
    except ConfigError as exc:
        sys.stderr.write(to_json(_error_report(exc, 2)))
        return 2
    except DrawdownError as exc:
        report = _error_report(exc, 1)
        try:
            write_json(cfg.out / "error.json", report)
        except OSError:
            pass
        sys.stdout.write(to_json(report))
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

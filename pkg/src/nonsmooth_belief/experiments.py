"""Named, reproducible experiments behind the command line runner.

Every experiment consumes a flat configuration dictionary (validated against
per-experiment defaults), runs deterministically for a given seed, and returns
a tabular trace plus a JSON-ready summary.  File writing, including the
`.17g`-formatted CSV and the rendered figures, lives in :func:`write_result`.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .integrate import BeliefTrajectory, integrate_sample, rk4_joint
from .models import builtin_model, model_names
from .moments import rhs_pwc_1d, rhs_pws
from .montecarlo import (
    crossing_error_final,
    draw_samples,
    empirical_moments,
    exact_reference_1d,
    moment_error,
    propagate_cloud,
    sample_skewness,
    standard_error_envelope,
)
from .ocp import (
    OcpProblem,
    OcpSolution,
    SolveOptions,
    StateConstraint,
    rollout,
    solve,
    solve_baseline,
    verify_solution_mc,
)
from .systems import GaussianBelief

__all__ = [
    "ExperimentResult",
    "experiment_names",
    "experiment_defaults",
    "validate_config",
    "run_experiment",
    "write_result",
    "quadcopter_problem",
    "implicit_constraint_problem",
]

DEFAULT_SEED = 12345

#: Tolerances in effect across the modules, echoed into every summary.
TOLERANCES = {
    "switch_tol": 1e-10,
    "var_floor": 1e-14,
    "psd_tol": 1e-8,
    "quad_epsrel": 1e-10,
    "tol_feas": 1e-6,
    "tol_stat": 1e-6,
}


@dataclass
class ExperimentResult:
    name: str
    columns: List[str]
    rows: List[List[float]]
    summary: dict
    solutions: Dict[str, dict] = field(default_factory=dict)
    extra_traces: Dict[str, Tuple[List[str], List[List[float]]]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Configuration handling
# ---------------------------------------------------------------------------

_DEFAULTS: Dict[str, dict] = {
    "crossing1d": {
        "seed": DEFAULT_SEED,
        "f1bar": 3.0, "f2bar": 1.0, "mu0": -3.0, "sigma0": 0.3,
        "T": 2.0, "steps": 400, "spread": 0.9,
    },
    "crossing1d-error": {
        "seed": DEFAULT_SEED,
        "f1bar": 3.0, "f2bar": 1.0, "mu0": -3.0, "sigma0": 0.3,
        "T": 2.0, "steps": 400,
    },
    "error-sweep-sigma": {
        "seed": DEFAULT_SEED,
        "f1bar": 3.0, "f2bar": 1.0, "mu0": -3.0, "T": 2.0,
        "sigma_min": 1e-3, "sigma_max": 1e-1, "n_points": 9,
    },
    "error-sweep-jump": {
        "seed": DEFAULT_SEED,
        "f2bar": 1.0, "sigma0": 0.3, "mu0": -3.0, "T": 4.0,
        "jump_min": 1e-12, "jump_max": 1e-1, "n_points": 12,
    },
    "spring-dashpot": {
        "seed": DEFAULT_SEED,
        "k": 10.0, "c": 0.5, "g_const": 1.0,
        "mu0": [2.0, 0.0], "Sigma0_diag": [0.1, 0.05],
        "T": 8.0, "steps": 800, "knots": 80, "samples": 10_000,
    },
    "quadcopter": {
        "seed": DEFAULT_SEED,
        "d": 0.01, "v_w": -1.0, "u_max": 5.0,
        "N": 30, "h": 0.2,
        "mu0": [0.0, 1.0, 5.0, 0.0],
        "Sigma0_diag": [1e-1, 1e-1, 1e-5, 1e-5],
        "p_level": 0.99, "p_y_min": -6.0,
        "obstacle_x": 40.0, "obstacle_curv": 0.05, "eps_u": 1e-5,
        "samples": 1000,
        "inner_maxiter": 30, "max_outer": 5,
    },
    "implicit-constraint": {
        "seed": DEFAULT_SEED,
        "u_max": 2.0, "pull": [4.5, 5.0], "goal": [6.0, -2.0],
        "mu0": [-6.5, -2.0], "Sigma0_diag": [0.25, 0.25],
        "N": 15, "h": 0.5, "p_level": 0.99,
        "eps_H": math.sqrt(0.5), "eps_u": 1e-5,
        "goal_radius": 1.0, "sigma_smooth": 5e-2,
        "samples": 50,
        "inner_maxiter": 150, "max_outer": 1,
    },
    "compare-baseline": {
        "seed": DEFAULT_SEED,
        "u_max": 2.0, "pull": [4.5, 5.0], "goal": [6.0, -2.0],
        "mu0": [-6.5, -2.0], "Sigma0_diag": [0.25, 0.25],
        "N": 15, "h": 0.5, "p_level": 0.99,
        "eps_H": math.sqrt(0.5), "eps_u": 1e-5,
        "goal_radius": 1.0, "sigma_smooth": 5e-2,
        "samples": 50,
        "inner_maxiter": 150, "max_outer": 1,
    },
}


def experiment_names() -> List[str]:
    return sorted(_DEFAULTS)


def experiment_defaults(name: str) -> dict:
    try:
        return dict(_DEFAULTS[name])
    except KeyError:
        raise KeyError(f"unknown experiment {name!r}; available: {experiment_names()}") from None


def validate_config(raw: dict, name: Optional[str] = None) -> Tuple[dict, List[str]]:
    """Check a raw configuration dictionary against the experiment schema.

    Returns (normalized config with all defaults materialized, error list).
    The experiment may be named either by the ``name`` argument or by an
    ``experiment`` key in the dictionary; unknown keys are rejected.
    """
    errors: List[str] = []
    if not isinstance(raw, dict):
        return {}, [f"configuration must be a JSON object, got {type(raw).__name__}"]
    raw = dict(raw)
    cfg_name = raw.pop("experiment", None)
    if cfg_name is not None and name is not None and cfg_name != name:
        errors.append(f"config names experiment {cfg_name!r} but {name!r} was requested")
    name = name or cfg_name
    if name is None:
        return {}, ["missing required key 'experiment' "
                    f"(one of {experiment_names()})"]
    if name not in _DEFAULTS:
        return {}, [f"unknown experiment {name!r}; available: {experiment_names()}"]
    defaults = _DEFAULTS[name]
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        errors.append(f"unknown keys for experiment {name!r}: {unknown}")
    normalized = dict(defaults)
    for key, value in raw.items():
        if key not in defaults:
            continue
        default = defaults[key]
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                errors.append(f"key {key!r} must be a number, got {value!r}")
                continue
        if isinstance(default, (list, tuple)):
            if not isinstance(value, (list, tuple)) or len(value) != len(default):
                errors.append(f"key {key!r} must be a sequence of length {len(default)}")
                continue
            value = list(value)
        normalized[key] = value
    normalized["experiment"] = name
    return normalized, errors


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _crossing_trace(cfg: dict):
    """Propagate the scalar crossing moments and pair them with the exact
    switched-normal reference at every knot."""
    f1, f2 = float(cfg["f1bar"]), float(cfg["f2bar"])
    mu0, s0 = float(cfg["mu0"]), float(cfg["sigma0"])
    T, steps = float(cfg["T"]), int(cfg["steps"])
    entry = builtin_model("crossing1d", {"f1bar": f1, "f2bar": f2,
                                         "mu0": mu0, "sigma0": s0,
                                         "T": T, "n_steps": steps})
    pwc = entry.pwc
    h = T / steps
    mu, v = mu0, s0 * s0
    rows = []
    s2_scale = abs(f2 / f1)
    for k in range(steps + 1):
        t = k * h
        ref_mean, ref_var = exact_reference_1d(mu0 + f1 * t, (f2 / f1) * mu0 + f2 * t,
                                               s0, s2_scale * s0)
        rows.append([t, mu, v, ref_mean, ref_var, abs(mu - ref_mean), abs(v - ref_var)])
        if k < steps:
            k1 = rhs_pwc_1d(pwc, mu, v)
            k2 = rhs_pwc_1d(pwc, mu + 0.5 * h * k1[0], v + 0.5 * h * k1[1])
            k3 = rhs_pwc_1d(pwc, mu + 0.5 * h * k2[0], v + 0.5 * h * k2[1])
            k4 = rhs_pwc_1d(pwc, mu + h * k3[0], v + h * k3[1])
            mu += (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            v += (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    columns = ["t", "mu_0", "Sigma_00", "ref_mu_0", "ref_Sigma_00", "err_mean", "err_cov"]
    return entry, columns, rows


def _crossing_window(cfg: dict) -> Tuple[float, float]:
    """Time window in which the mode-1 mean is within 6 sigma of the surface."""
    f1 = float(cfg["f1bar"])
    mu0, s0 = float(cfg["mu0"]), float(cfg["sigma0"])
    if f1 == 0.0:
        return 0.0, float(cfg["T"])
    t_lo = (-6.0 * s0 - mu0) / f1
    t_hi = (6.0 * s0 - mu0) / f1
    return min(t_lo, t_hi), max(t_lo, t_hi)


def _plateau_drift(rows, t_lo, t_hi):
    pre = [r[5] for r in rows if r[0] < t_lo]
    post = [r[5] for r in rows if r[0] > t_hi]
    pre_drift = max(pre) - min(pre) if len(pre) > 1 else 0.0
    post_drift = max(post) - min(post) if len(post) > 1 else 0.0
    return pre_drift, post_drift


def _loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float]:
    coeffs = np.polyfit(np.log(np.asarray(xs)), np.log(np.asarray(ys)), 1)
    return float(coeffs[0]), float(coeffs[1])


def _belief_columns(n: int, with_ref: bool) -> List[str]:
    cols = ["t"] + [f"mu_{i}" for i in range(n)]
    cols += [f"Sigma_{i}{j}" for i in range(n) for j in range(n)]
    if with_ref:
        cols += [f"ref_mu_{i}" for i in range(n)]
        cols += [f"ref_Sigma_{i}{j}" for i in range(n) for j in range(n)]
        cols += ["err_mean", "err_cov"]
    return cols


def _belief_row(t: float, belief: GaussianBelief,
                ref: Optional[GaussianBelief] = None) -> List[float]:
    row = [t] + list(belief.mu) + list(belief.Sigma.ravel())
    if ref is not None:
        err = moment_error(belief, ref)
        row += list(ref.mu) + list(ref.Sigma.ravel()) + [err.mean_err, err.cov_err]
    return row


def _trajectory_rows(traj: BeliefTrajectory) -> List[List[float]]:
    return [_belief_row(float(t), b) for t, b in zip(traj.times, traj.beliefs)]


def _solution_dict(sol: OcpSolution, cons_names: Sequence[str],
                   cons_values: np.ndarray) -> dict:
    return {
        "controls": sol.controls.tolist(),
        "objective": sol.objective,
        "max_violation": sol.max_violation,
        "stationarity": sol.stationarity,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "diagnostics": sol.diagnostics,
        "backoffs": {name: cons_values[i].tolist()
                     for i, name in enumerate(cons_names)},
    }


# ---------------------------------------------------------------------------
# Problem builders
# ---------------------------------------------------------------------------

def quadcopter_problem(cfg: Optional[dict] = None) -> Tuple[OcpProblem, dict]:
    """Planar quadcopter: maximize downrange position under a floor bound and
    a parabolic obstacle forcing a climb out of the wind shadow."""
    cfg = dict(_DEFAULTS["quadcopter"], **(cfg or {}))
    entry = builtin_model("quadcopter", {
        k: cfg[k] for k in ("d", "v_w", "u_max", "N", "h", "mu0", "Sigma0_diag",
                            "p_level", "p_y_min", "obstacle_x", "obstacle_curv", "eps_u")
    })
    p = entry.params
    curv, obx = float(p["obstacle_curv"]), float(p["obstacle_x"])
    pymin, eps_u = float(p["p_y_min"]), float(p["eps_u"])
    constraints = (
        StateConstraint("floor",
                        lambda m: pymin - float(m[1]),
                        lambda m: np.array([0.0, -1.0, 0.0, 0.0])),
        StateConstraint("obstacle",
                        lambda m: -curv * (float(m[0]) - obx) ** 2 - float(m[1]),
                        lambda m: np.array([-2.0 * curv * (float(m[0]) - obx), -1.0, 0.0, 0.0])),
    )
    u_max = float(p["u_max"])
    problem = OcpProblem(
        model=entry.model, N=int(p["N"]), h=float(p["h"]),
        stage_cost=lambda m, u: eps_u * float(np.dot(u, u)),
        terminal_cost=lambda m: -float(m[0]),
        u_lower=-u_max * np.ones(2), u_upper=u_max * np.ones(2),
        state_constraints=constraints, p_level=float(p["p_level"]),
        mu0=np.asarray(p["mu0"], dtype=float),
        Sigma0=np.diag(np.asarray(p["Sigma0_diag"], dtype=float)),
    )
    return problem, p


def implicit_constraint_problem(cfg: Optional[dict] = None) -> Tuple[OcpProblem, dict]:
    """Planar steering task whose trap region enters only through the
    dynamics: no explicit state constraints, goal-centered soft-norm cost."""
    cfg = dict(_DEFAULTS["implicit-constraint"], **(cfg or {}))
    entry = builtin_model("implicit_constraint", {
        k: cfg[k] for k in ("u_max", "pull", "goal", "mu0", "Sigma0_diag",
                            "N", "h", "p_level", "eps_H", "eps_u",
                            "goal_radius", "sigma_smooth")
    })
    p = entry.params
    goal = np.asarray(p["goal"], dtype=float)
    eps_H, eps_u = float(p["eps_H"]), float(p["eps_u"])

    def soft_dist(m):
        d = np.asarray(m, dtype=float) - goal
        return math.sqrt(float(d @ d) + eps_H * eps_H)

    u_max = float(p["u_max"])
    problem = OcpProblem(
        model=entry.model, N=int(p["N"]), h=float(p["h"]),
        stage_cost=lambda m, u: soft_dist(m) + eps_u * float(np.dot(u, u)),
        terminal_cost=soft_dist,
        u_lower=-u_max * np.ones(2), u_upper=u_max * np.ones(2),
        state_constraints=(), p_level=float(p["p_level"]),
        mu0=np.asarray(p["mu0"], dtype=float),
        Sigma0=np.diag(np.asarray(p["Sigma0_diag"], dtype=float)),
    )
    return problem, p


def _warm_starts(problem: OcpProblem, goal: np.ndarray) -> List[np.ndarray]:
    """Zero controls plus a straight-line-to-goal constant control."""
    zero = np.zeros((problem.N, problem.n_u))
    direction = (goal - problem.mu0) / (problem.N * problem.h)
    straight = np.clip(np.tile(direction, (problem.N, 1)),
                       problem.u_lower, problem.u_upper)
    return [zero, straight]


def _solve_best(problem: OcpProblem, starts: List[np.ndarray],
                options: SolveOptions, baseline_sigma: Optional[float] = None) -> OcpSolution:
    best = None
    for u0 in starts:
        if baseline_sigma is None:
            sol = solve(problem, u0, options)
        else:
            sol = solve_baseline(problem, u0, options, baseline_sigma)
        if best is None or sol.objective < best.objective:
            best = sol
    return best


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _exp_crossing1d(cfg: dict) -> ExperimentResult:
    entry, columns, rows = _crossing_trace(cfg)
    t_lo, t_hi = _crossing_window(cfg)
    pre_drift, post_drift = _plateau_drift(rows, t_lo, t_hi)

    # Three-point sample demonstration of the jump-matrix spread contraction.
    spread = float(cfg["spread"])
    mu0, T = float(cfg["mu0"]), float(cfg["T"])
    h = T / int(cfg["steps"])
    finals = []
    t_switch = None
    for x0 in (mu0, mu0 - spread, mu0 + spread):
        _, states, events = integrate_sample(entry.model, np.array([x0]), None, T, h)
        finals.append(float(states[-1][0]))
        if x0 == mu0 and events:
            t_switch = float(events[0].t_s)
    pre_spread = 2.0 * spread
    post_spread = max(finals) - min(finals)

    summary = {
        "final_err_mean": rows[-1][5],
        "final_err_cov": rows[-1][6],
        "crossing_window": [t_lo, t_hi],
        "pre_window_drift": pre_drift,
        "post_window_drift": post_drift,
        "sample_points": [mu0, mu0 - spread, mu0 + spread],
        "sample_finals": finals,
        "mean_switch_time": t_switch,
        "pre_spread": pre_spread,
        "post_spread": post_spread,
        "spread_ratio": post_spread / pre_spread,
    }
    return ExperimentResult("crossing1d", columns, rows, summary)


def _exp_crossing1d_error(cfg: dict) -> ExperimentResult:
    _, columns, rows = _crossing_trace(cfg)
    t_lo, t_hi = _crossing_window(cfg)
    pre_drift, post_drift = _plateau_drift(rows, t_lo, t_hi)
    in_window = [r[5] for r in rows if t_lo <= r[0] <= t_hi]
    summary = {
        "final_err_mean": rows[-1][5],
        "final_err_cov": rows[-1][6],
        "crossing_window": [t_lo, t_hi],
        "pre_window_drift": pre_drift,
        "post_window_drift": post_drift,
        "max_err_mean": max(r[5] for r in rows),
        "max_err_mean_in_window": max(in_window) if in_window else None,
    }
    return ExperimentResult("crossing1d-error", columns, rows, summary)


def _exp_sweep_sigma(cfg: dict) -> ExperimentResult:
    f1, f2 = float(cfg["f1bar"]), float(cfg["f2bar"])
    mu0, T = float(cfg["mu0"]), float(cfg["T"])
    sigmas = np.logspace(math.log10(float(cfg["sigma_min"])),
                         math.log10(float(cfg["sigma_max"])), int(cfg["n_points"]))
    rows = [[float(s), crossing_error_final(f1, f2, float(s), mu0, T)] for s in sigmas]
    slope, intercept = _loglog_slope([r[0] for r in rows], [r[1] for r in rows])
    summary = {"slope": slope, "intercept": intercept,
               "sigma0": [r[0] for r in rows], "err_mean": [r[1] for r in rows]}
    return ExperimentResult("error-sweep-sigma", ["sigma0", "err_mean"], rows, summary)


def _exp_sweep_jump(cfg: dict) -> ExperimentResult:
    f2 = float(cfg["f2bar"])
    s0, mu0, T = float(cfg["sigma0"]), float(cfg["mu0"]), float(cfg["T"])
    jumps = np.logspace(math.log10(float(cfg["jump_min"])),
                        math.log10(float(cfg["jump_max"])), int(cfg["n_points"]))
    rows = []
    slopes = {}
    for sign in (1.0, -1.0):
        errs = []
        for df in jumps:
            err = crossing_error_final(f2 + sign * float(df), f2, s0, mu0, T)
            errs.append(max(err, 1e-300))
            rows.append([sign * float(df), errs[-1]])
        slopes["pos" if sign > 0 else "neg"] = _loglog_slope(jumps, errs)[0]
    summary = {
        "slope_pos": slopes["pos"],
        "slope_neg": slopes["neg"],
        "slope": 0.5 * (slopes["pos"] + slopes["neg"]),
        "jump": [r[0] for r in rows],
        "err_mean": [r[1] for r in rows],
    }
    return ExperimentResult("error-sweep-jump", ["jump", "err_mean"], rows, summary)


def _exp_spring_dashpot(cfg: dict) -> ExperimentResult:
    entry = builtin_model("spring_dashpot", {
        "k": cfg["k"], "c": cfg["c"], "g_const": cfg["g_const"],
        "mu0": tuple(cfg["mu0"]), "Sigma0_diag": tuple(cfg["Sigma0_diag"]),
        "T": cfg["T"], "n_steps": cfg["steps"], "n_samples": cfg["samples"],
    })
    model = entry.model
    T, steps, knots = float(cfg["T"]), int(cfg["steps"]), int(cfg["knots"])
    n_samples, seed = int(cfg["samples"]), int(cfg["seed"])
    belief0 = GaussianBelief(mu=np.asarray(cfg["mu0"], dtype=float),
                             Sigma=np.diag(np.asarray(cfg["Sigma0_diag"], dtype=float)))
    traj = rk4_joint(lambda b, u: rhs_pws(model, b, u), belief0, None, T, steps, n_u=0)

    grid = np.linspace(0.0, T, knots + 1)
    cloud0 = draw_samples(belief0, n_samples, seed)
    clouds = propagate_cloud(model, cloud0, None, grid, h=T / steps)

    stride = steps // knots
    rows = []
    skews = []
    ratios = []
    first_switch = _first_switch_time(model, belief0.mu, T, T / steps)
    # The leading tail of the cloud reaches the surface before the mean does;
    # the envelope comparison is only meaningful while no sample has switched.
    first_sample_switch = None
    for j, t in enumerate(grid):
        approx = traj.beliefs[j * stride]
        emp = empirical_moments(clouds[j])
        rows.append(_belief_row(float(t), approx, ref=emp))
        proj = clouds[j].samples @ np.asarray(model.grad_psi(approx.mu), dtype=float)
        skews.append(sample_skewness(proj))
        if first_sample_switch is None and float(np.max(model.psi(clouds[j].samples))) >= 0.0:
            first_sample_switch = float(t)
        env_mean, env_cov = standard_error_envelope(emp, n_samples)
        err = moment_error(approx, emp)
        if first_sample_switch is None:
            ratios.append(max(err.mean_err / env_mean, err.cov_err / env_cov))
    summary = {
        "first_switch_time": first_switch,
        "first_sample_switch_time": first_sample_switch,
        "max_envelope_ratio_pre_switch": max(ratios) if ratios else None,
        "final_err_mean": rows[-1][-2],
        "final_err_cov": rows[-1][-1],
        "max_err_mean": max(r[-2] for r in rows),
        "max_err_cov": max(r[-1] for r in rows),
        "max_projected_skewness": max(skews),
        "final_projected_skewness": skews[-1],
        "skewness": skews,
    }
    return ExperimentResult("spring-dashpot", _belief_columns(2, with_ref=True),
                            rows, summary)


def _first_switch_time(model, x0, T, h) -> Optional[float]:
    _, _, events = integrate_sample(model, np.asarray(x0, dtype=float), None, T, h)
    return float(events[0].t_s) if events else None


def _exp_quadcopter(cfg: dict) -> ExperimentResult:
    problem, params = quadcopter_problem(cfg)
    options = SolveOptions(inner_maxiter=int(cfg["inner_maxiter"]),
                           max_outer=int(cfg["max_outer"]),
                           constraint_margin=1e-4)
    _, obj_zero, _ = rollout(problem, np.zeros((problem.N, problem.n_u)))
    sol = solve(problem, np.zeros((problem.N, problem.n_u)), options)
    _, _, cons = rollout(problem, sol.controls)
    report = verify_solution_mc(problem, sol, int(cfg["samples"]), int(cfg["seed"]))
    cons_names = [c.name for c in problem.state_constraints]
    summary = {
        "objective": sol.objective,
        "objective_zero_controls": obj_zero,
        "improvement": obj_zero - sol.objective,
        "max_violation": sol.max_violation,
        "stationarity": sol.stationarity,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "p_level": float(params["p_level"]),
        "mc_samples": report.n_samples,
        "mc_min_satisfaction": {name: float(report.satisfaction[i].min())
                                for i, name in enumerate(cons_names)},
    }
    result = ExperimentResult("quadcopter", _belief_columns(4, with_ref=False),
                              _trajectory_rows(sol.trajectory), summary)
    result.solutions["solution.json"] = _solution_dict(sol, cons_names, cons)
    return result


def _exp_implicit(cfg: dict) -> ExperimentResult:
    problem, params = implicit_constraint_problem(cfg)
    options = SolveOptions(inner_maxiter=int(cfg["inner_maxiter"]),
                           max_outer=int(cfg["max_outer"]))
    goal = np.asarray(params["goal"], dtype=float)
    sol = _solve_best(problem, _warm_starts(problem, goal), options)
    report = verify_solution_mc(problem, sol, int(cfg["samples"]), int(cfg["seed"]),
                                goal=goal, goal_radius=float(params["goal_radius"]))
    clearance = [float(problem.model.psi(b.mu)) for b in sol.trajectory.beliefs]
    summary = {
        "objective": sol.objective,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "stationarity": sol.stationarity,
        "goal_fraction": report.goal_fraction,
        "mc_samples": report.n_samples,
        "final_mean": sol.trajectory.final.mu.tolist(),
        "clearance": clearance,
        "min_clearance": min(clearance),
    }
    result = ExperimentResult("implicit-constraint", _belief_columns(2, with_ref=False),
                              _trajectory_rows(sol.trajectory), summary)
    result.solutions["solution.json"] = _solution_dict(sol, [], np.zeros((0, problem.N)))
    return result


def _exp_compare_baseline(cfg: dict) -> ExperimentResult:
    problem, params = implicit_constraint_problem(cfg)
    options = SolveOptions(inner_maxiter=int(cfg["inner_maxiter"]),
                           max_outer=int(cfg["max_outer"]))
    goal = np.asarray(params["goal"], dtype=float)
    sigma_smooth = float(cfg["sigma_smooth"])
    starts = _warm_starts(problem, goal)
    sol_norm = _solve_best(problem, starts, options)
    sol_base = _solve_best(problem, starts, options, baseline_sigma=sigma_smooth)
    seed, n_samples = int(cfg["seed"]), int(cfg["samples"])
    radius = float(params["goal_radius"])
    rep_norm = verify_solution_mc(problem, sol_norm, n_samples, seed,
                                  goal=goal, goal_radius=radius)
    rep_base = verify_solution_mc(problem, sol_base, n_samples, seed,
                                  goal=goal, goal_radius=radius)
    clear_norm = [float(problem.model.psi(b.mu)) for b in sol_norm.trajectory.beliefs]
    clear_base = [float(problem.model.psi(b.mu)) for b in sol_base.trajectory.beliefs]
    summary = {
        "sigma_smooth": sigma_smooth,
        "objective_normalization": sol_norm.objective,
        "objective_baseline": sol_base.objective,
        "converged_normalization": sol_norm.converged,
        "converged_baseline": sol_base.converged,
        "goal_fraction_normalization": rep_norm.goal_fraction,
        "goal_fraction_baseline": rep_base.goal_fraction,
        "mc_samples": n_samples,
        "clearance_normalization": clear_norm,
        "clearance_baseline": clear_base,
    }
    result = ExperimentResult("compare-baseline", _belief_columns(2, with_ref=False),
                              _trajectory_rows(sol_norm.trajectory), summary)
    result.extra_traces["trace_baseline.csv"] = (
        _belief_columns(2, with_ref=False), _trajectory_rows(sol_base.trajectory))
    result.solutions["solution_normalization.json"] = _solution_dict(sol_norm, [], np.zeros((0, problem.N)))
    result.solutions["solution_baseline.json"] = _solution_dict(sol_base, [], np.zeros((0, problem.N)))
    return result


_RUNNERS: Dict[str, Callable[[dict], ExperimentResult]] = {
    "crossing1d": _exp_crossing1d,
    "crossing1d-error": _exp_crossing1d_error,
    "error-sweep-sigma": _exp_sweep_sigma,
    "error-sweep-jump": _exp_sweep_jump,
    "spring-dashpot": _exp_spring_dashpot,
    "quadcopter": _exp_quadcopter,
    "implicit-constraint": _exp_implicit,
    "compare-baseline": _exp_compare_baseline,
}


def run_experiment(name: str, config: Optional[dict] = None) -> ExperimentResult:
    """Run a named experiment on a (partial) configuration dictionary."""
    cfg, errors = validate_config(config or {}, name)
    if errors:
        raise ValueError("invalid configuration: " + "; ".join(errors))
    t0 = time.perf_counter()
    result = _RUNNERS[name](cfg)
    wall = time.perf_counter() - t0
    result.summary = {
        "experiment": name,
        "version": __version__,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "seed": cfg.get("seed"),
        "wall_clock_s": wall,
        "tolerances": dict(TOLERANCES),
        **result.summary,
    }
    return result


# ---------------------------------------------------------------------------
# Artifact writing
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[Sequence[float]]) -> None:
    lines = [",".join(columns)]
    lines += [",".join(_fmt(x) for x in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_result(result: ExperimentResult, out_dir, figures: bool = True) -> List[Path]:
    """Write trace.csv, summary.json, any solution files, and the figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    trace = out / "trace.csv"
    _write_csv(trace, result.columns, result.rows)
    written.append(trace)
    for fname, (cols, rows) in result.extra_traces.items():
        path = out / fname
        _write_csv(path, cols, rows)
        written.append(path)
    for fname, payload in result.solutions.items():
        path = out / fname
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        written.append(path)
    summary = out / "summary.json"
    summary.write_text(json.dumps(result.summary, indent=2, sort_keys=True,
                                  default=float) + "\n", encoding="utf-8")
    written.append(summary)
    if figures:
        from .figures import render_figures
        written.extend(render_figures(result, out))
    return written

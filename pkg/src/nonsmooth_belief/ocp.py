"""Discrete-time stochastic optimal control on the (mu, Sigma) dynamics.

Transcription is single shooting over the controls only; the belief knots are
eliminated by forward simulation (one RK4 step of the moment dynamics per
stage).  State chance constraints are handled by a Powell-Hestenes-Rockafellar
augmented Lagrangian whose bound-constrained inner problems go to L-BFGS-B,
with objective and constraint gradients by central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .gaussmath import std_normal_inv_cdf
from .integrate import BeliefTrajectory, DivergenceError, PiecewiseConstantControl, _rk4_step
from .moments import baseline_dt, chance_backoff, rhs_pws, rhs_pws_batch
from .montecarlo import draw_samples, propagate_cloud
from .systems import GaussianBelief, PiecewiseSmoothModel, smoothed_rhs

__all__ = [
    "StateConstraint",
    "OcpProblem",
    "OcpSolution",
    "SolveOptions",
    "McReport",
    "rollout",
    "solve",
    "solve_baseline",
    "verify_solution_mc",
    "fd_gradient",
]


@dataclass(frozen=True)
class StateConstraint:
    """One scalar state constraint fun(mu) <= 0 with its gradient."""

    name: str
    fun: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OcpProblem:
    model: PiecewiseSmoothModel
    N: int
    h: float
    stage_cost: Callable[[np.ndarray, np.ndarray], float]
    terminal_cost: Callable[[np.ndarray], float]
    u_lower: np.ndarray
    u_upper: np.ndarray
    state_constraints: Tuple[StateConstraint, ...]
    p_level: float
    mu0: np.ndarray
    Sigma0: np.ndarray
    rk4_substeps: int = 1

    def __post_init__(self):
        object.__setattr__(self, "u_lower", np.asarray(self.u_lower, dtype=float))
        object.__setattr__(self, "u_upper", np.asarray(self.u_upper, dtype=float))
        object.__setattr__(self, "mu0", np.asarray(self.mu0, dtype=float))
        object.__setattr__(self, "Sigma0", np.atleast_2d(np.asarray(self.Sigma0, dtype=float)))
        object.__setattr__(self, "state_constraints", tuple(self.state_constraints))
        if self.N < 1:
            raise ValueError("OcpProblem: N must be >= 1")
        if self.h <= 0.0:
            raise ValueError("OcpProblem: step h must be positive")
        if not (0.5 < self.p_level < 1.0):
            raise ValueError("OcpProblem: p_level must lie in (1/2, 1)")

    @property
    def gamma(self) -> float:
        return std_normal_inv_cdf(self.p_level)

    @property
    def n_u(self) -> int:
        return self.model.n_u

    def initial_belief(self) -> GaussianBelief:
        return GaussianBelief(mu=self.mu0, Sigma=self.Sigma0)


@dataclass(frozen=True)
class OcpSolution:
    controls: np.ndarray
    trajectory: BeliefTrajectory
    objective: float
    max_violation: float
    stationarity: float
    iterations: int
    converged: bool
    diagnostics: dict


@dataclass(frozen=True)
class McReport:
    """A-posteriori open-loop validation of a solution by sampling."""

    satisfaction: np.ndarray      # (n_h, N) empirical fraction with h_i <= 0 at knot k=1..N
    goal_fraction: Optional[float]
    n_samples: int
    seed: int


@dataclass
class SolveOptions:
    tol_stat: float = 1e-6
    tol_feas: float = 1e-6
    max_outer: int = 10
    rho0: float = 10.0
    rho_growth: float = 10.0
    inner_maxiter: int = 120
    fd_step: float = 1e-6
    #: Constraints are tightened by this margin while solving, so the returned
    #: iterate satisfies the original backoffs even when the augmented
    #: Lagrangian stops a little short of exact feasibility.
    constraint_margin: float = 0.0


def _stage_map_normalization(problem: OcpProblem, belief: GaussianBelief,
                             u: np.ndarray) -> GaussianBelief:
    mu, Sigma = belief.mu, belief.Sigma
    hsub = problem.h / problem.rk4_substeps
    for _ in range(problem.rk4_substeps):
        b = GaussianBelief(mu=mu, Sigma=Sigma)
        k1m, k1S = rhs_pws(problem.model, b, u)
        k2m, k2S = rhs_pws(problem.model, GaussianBelief(mu + 0.5 * hsub * k1m,
                                                        Sigma + 0.5 * hsub * k1S), u)
        k3m, k3S = rhs_pws(problem.model, GaussianBelief(mu + 0.5 * hsub * k2m,
                                                        Sigma + 0.5 * hsub * k2S), u)
        k4m, k4S = rhs_pws(problem.model, GaussianBelief(mu + hsub * k3m,
                                                        Sigma + hsub * k3S), u)
        mu = mu + (hsub / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
        Sigma = Sigma + (hsub / 6.0) * (k1S + 2.0 * k2S + 2.0 * k3S + k4S)
        Sigma = 0.5 * (Sigma + Sigma.T)
    return GaussianBelief(mu=mu, Sigma=Sigma)


def _stage_map_baseline(problem: OcpProblem, belief: GaussianBelief, u: np.ndarray,
                        sigma_smooth: float) -> GaussianBelief:
    hsub = problem.h / problem.rk4_substeps

    def mean_map(x):
        for _ in range(problem.rk4_substeps):
            x = _rk4_step(lambda y: smoothed_rhs(problem.model, y, u, sigma_smooth), x, hsub)
        return x

    return baseline_dt(mean_map, belief)


def _stage_map_normalization_many(problem: OcpProblem, Mus: np.ndarray,
                                  Sigmas: np.ndarray, u: np.ndarray):
    hsub = problem.h / problem.rk4_substeps
    model = problem.model
    for _ in range(problem.rk4_substeps):
        k1m, k1S = rhs_pws_batch(model, Mus, Sigmas, u)
        k2m, k2S = rhs_pws_batch(model, Mus + 0.5 * hsub * k1m, Sigmas + 0.5 * hsub * k1S, u)
        k3m, k3S = rhs_pws_batch(model, Mus + 0.5 * hsub * k2m, Sigmas + 0.5 * hsub * k2S, u)
        k4m, k4S = rhs_pws_batch(model, Mus + hsub * k3m, Sigmas + hsub * k3S, u)
        Mus = Mus + (hsub / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
        Sigmas = Sigmas + (hsub / 6.0) * (k1S + 2.0 * k2S + 2.0 * k3S + k4S)
        Sigmas = 0.5 * (Sigmas + Sigmas.transpose(0, 2, 1))
    return Mus, Sigmas


def _stage_map_many(problem: OcpProblem, Mus: np.ndarray, Sigmas: np.ndarray,
                    u: np.ndarray, propagator: str, sigma_smooth: Optional[float]):
    """Advance a batch of beliefs one stage under a shared control."""
    if propagator == "normalization" and problem.model.vectorized:
        return _stage_map_normalization_many(problem, Mus, Sigmas, u)
    out_mu = np.empty_like(Mus)
    out_S = np.empty_like(Sigmas)
    for r in range(Mus.shape[0]):
        b = _stage_map(problem, GaussianBelief(Mus[r], Sigmas[r]), u,
                       propagator, sigma_smooth)
        out_mu[r] = b.mu
        out_S[r] = b.Sigma
    return out_mu, out_S


def _stage_map(problem: OcpProblem, belief: GaussianBelief, u: np.ndarray,
               propagator: str, sigma_smooth: Optional[float]) -> GaussianBelief:
    if propagator == "normalization":
        return _stage_map_normalization(problem, belief, u)
    if propagator == "baseline":
        if sigma_smooth is None:
            raise ValueError("rollout: baseline propagator needs sigma_smooth")
        return _stage_map_baseline(problem, belief, u, sigma_smooth)
    raise ValueError(f"rollout: unknown propagator {propagator!r}")


def _forward(problem: OcpProblem, controls: np.ndarray,
             propagator: str, sigma_smooth: Optional[float]):
    """Single-shooting sweep: belief knots, per-stage cost terms, backoffs."""
    controls = np.asarray(controls, dtype=float).reshape(problem.N, problem.n_u)
    belief = problem.initial_belief()
    beliefs = [belief]
    gamma = problem.gamma
    n_h = len(problem.state_constraints)
    cons = np.zeros((n_h, problem.N))
    cost_terms = np.zeros(problem.N)
    for k in range(problem.N):
        u = controls[k]
        cost_terms[k] = problem.h * float(problem.stage_cost(belief.mu, u))
        try:
            belief = _stage_map(problem, belief, u, propagator, sigma_smooth)
        except (ValueError, FloatingPointError) as exc:
            raise DivergenceError(f"rollout: stage {k} failed: {exc}", t_last=k * problem.h) from exc
        if not (np.all(np.isfinite(belief.mu)) and np.all(np.isfinite(belief.Sigma))):
            raise DivergenceError(f"rollout: non-finite belief after stage {k}",
                                  t_last=k * problem.h)
        beliefs.append(belief)
        for i, con in enumerate(problem.state_constraints):
            cons[i, k] = chance_backoff(con.fun(belief.mu), con.grad(belief.mu), belief, gamma)
    terminal = float(problem.terminal_cost(belief.mu))
    objective = float(np.sum(cost_terms)) + terminal
    return beliefs, cost_terms, cons, objective


def rollout(problem: OcpProblem, controls: np.ndarray,
            propagator: str = "normalization",
            sigma_smooth: Optional[float] = None):
    """Forward-simulate the belief under the controls.

    Returns (trajectory, objective, constraint_values) where constraint_values
    has shape (n_h, N): the backoff value of constraint i at knot k = 1..N.
    """
    beliefs, _, cons, objective = _forward(problem, controls, propagator, sigma_smooth)
    times = problem.h * np.arange(problem.N + 1)
    return BeliefTrajectory(times=times, beliefs=beliefs), objective, cons


def fd_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray,
                step: float) -> np.ndarray:
    """Central-difference gradient with a uniform absolute step."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (fun(xp) - fun(xm)) / (2.0 * step)
    return g


def _probe_values(problem: OcpProblem, uflat: np.ndarray, step: float,
                  propagator: str, sigma_smooth: Optional[float]):
    """Objective and constraint values of all central-difference control probes.

    Perturbing the stage-k control leaves stages before k untouched, so each
    probe re-simulates only the trajectory tail; all live probes advance in
    lockstep through one batched stage map per stage (a wavefront that grows
    by 2 n_u probes each stage).  Probe 2*(k*n_u + j) carries the +step
    perturbation of control j at stage k, the next probe the -step one.
    Returns (objs, cons) with shapes (2 N n_u,) and (2 N n_u, n_h, N).
    """
    N, n_u = problem.N, problem.n_u
    n_x = problem.mu0.size
    n_h = len(problem.state_constraints)
    gamma = problem.gamma
    beliefs, cost_terms, cons, _ = _forward(problem, uflat, propagator, sigma_smooth)
    controls = np.asarray(uflat, dtype=float).reshape(N, n_u)
    prefix_cost = np.concatenate(([0.0], np.cumsum(cost_terms)))
    Mus = np.empty((0, n_x))
    Sigmas = np.empty((0, n_x, n_x))
    obj_acc = np.empty(0)
    cons_acc = np.empty((0, n_h, N))
    for kk in range(N):
        u_kk = controls[kk]
        if Mus.shape[0]:
            obj_acc = obj_acc + problem.h * np.array(
                [float(problem.stage_cost(mu, u_kk)) for mu in Mus])
            Mus, Sigmas = _stage_map_many(problem, Mus, Sigmas, u_kk,
                                          propagator, sigma_smooth)
        new_mu, new_S, new_obj = [], [], []
        for j in range(n_u):
            for s in (step, -step):
                u_p = u_kk.copy()
                u_p[j] += s
                o = prefix_cost[kk] + problem.h * float(problem.stage_cost(beliefs[kk].mu, u_p))
                b = _stage_map(problem, beliefs[kk], u_p, propagator, sigma_smooth)
                new_mu.append(b.mu)
                new_S.append(b.Sigma)
                new_obj.append(o)
        Mus = np.concatenate([Mus, np.asarray(new_mu)])
        Sigmas = np.concatenate([Sigmas, np.asarray(new_S)])
        obj_acc = np.concatenate([obj_acc, np.asarray(new_obj)])
        cons_acc = np.concatenate([cons_acc, np.repeat(cons[None], 2 * n_u, axis=0)])
        for r in range(Mus.shape[0]):
            b = GaussianBelief(Mus[r], Sigmas[r])
            for i, con in enumerate(problem.state_constraints):
                cons_acc[r, i, kk] = chance_backoff(con.fun(b.mu), con.grad(b.mu),
                                                    b, gamma)
    obj_acc = obj_acc + np.array([float(problem.terminal_cost(mu)) for mu in Mus])
    return obj_acc, cons_acc


def _projected_grad_norm(x, g, lb, ub):
    return float(np.max(np.abs(x - np.clip(x - g, lb, ub)))) if x.size else 0.0


def _solve_impl(problem: OcpProblem, init_controls: np.ndarray, options: SolveOptions,
                propagator: str, sigma_smooth: Optional[float]) -> OcpSolution:
    N, n_u = problem.N, problem.n_u
    u0 = np.asarray(init_controls, dtype=float).reshape(N * n_u)
    if not np.all(np.isfinite(u0)):
        raise ValueError("solve: non-finite initial controls")
    lb = np.tile(problem.u_lower, N)
    ub = np.tile(problem.u_upper, N)
    u0 = np.clip(u0, lb, ub)
    bounds = list(zip(lb, ub))
    n_c = len(problem.state_constraints) * N

    margin = options.constraint_margin

    def evaluate(uflat):
        _, _, cons, obj = _forward(problem, uflat, propagator, sigma_smooth)
        return obj, cons.ravel() + margin

    lam = np.zeros(n_c)
    rho = options.rho0

    def al_of(obj, c):
        if n_c == 0:
            return obj
        shifted = np.maximum(0.0, lam + rho * c)
        return obj + float(np.sum(shifted ** 2 - lam ** 2)) / (2.0 * rho)

    def aug_lagrangian(uflat):
        obj, c = evaluate(uflat)
        return al_of(obj, c)

    step = options.fd_step

    def al_grad(uflat):
        objs, cons_all = _probe_values(problem, uflat, step, propagator, sigma_smooth)
        vals = np.array([al_of(objs[r], cons_all[r].ravel() + margin)
                         for r in range(objs.size)])
        g = np.empty(N * n_u)
        for k in range(N):
            for j in range(n_u):
                base = 2 * (k * n_u + j)
                g[k * n_u + j] = (vals[base] - vals[base + 1]) / (2.0 * step)
        return g

    u = u0
    iterations = 0
    viol_prev = np.inf
    n_outer = options.max_outer if n_c else 1
    obj = 0.0
    viol = 0.0
    stat = np.inf
    for outer in range(n_outer):
        res = minimize(aug_lagrangian, u, jac=al_grad, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": options.inner_maxiter, "ftol": 1e-14,
                                "gtol": min(options.tol_stat, 1e-7)})
        u = np.clip(res.x, lb, ub)
        iterations += int(res.nit)
        obj, c = evaluate(u)
        viol = float(np.max(np.maximum(0.0, c))) if n_c else 0.0
        stat = _projected_grad_norm(u, al_grad(u), lb, ub)
        if viol <= options.tol_feas and stat <= options.tol_stat * (1.0 + abs(obj)):
            break
        if n_c:
            lam = np.maximum(0.0, lam + rho * c)
            if viol > 0.25 * viol_prev:
                rho *= options.rho_growth
            viol_prev = viol
    trajectory, obj, cons = rollout(problem, u, propagator=propagator, sigma_smooth=sigma_smooth)
    viol = float(np.max(np.maximum(0.0, cons))) if n_c else 0.0
    converged = bool(viol <= options.tol_feas and stat <= options.tol_stat * (1.0 + abs(obj)))
    return OcpSolution(
        controls=u.reshape(N, n_u), trajectory=trajectory, objective=obj,
        max_violation=viol, stationarity=stat, iterations=iterations,
        converged=converged,
        diagnostics={"propagator": propagator, "sigma_smooth": sigma_smooth,
                     "rho_final": rho if n_c else None, "outer_iterations": outer + 1},
    )


def solve(problem: OcpProblem, init_controls: np.ndarray,
          options: Optional[SolveOptions] = None) -> OcpSolution:
    """Solve the chance-constrained OCP on the normalization-based dynamics."""
    return _solve_impl(problem, init_controls, options or SolveOptions(),
                       "normalization", None)


def solve_baseline(problem: OcpProblem, init_controls: np.ndarray,
                   options: Optional[SolveOptions], sigma_smooth: float) -> OcpSolution:
    """Identical pipeline with the linearization baseline on smoothed dynamics."""
    return _solve_impl(problem, init_controls, options or SolveOptions(),
                       "baseline", sigma_smooth)


def verify_solution_mc(problem: OcpProblem, solution: OcpSolution, n_samples: int,
                       seed: int, h_sample: Optional[float] = None,
                       goal: Optional[np.ndarray] = None,
                       goal_radius: Optional[float] = None) -> McReport:
    """Open-loop Monte-Carlo validation through the nonsmooth sample dynamics."""
    schedule = PiecewiseConstantControl(solution.controls, problem.h)
    grid = problem.h * np.arange(problem.N + 1)
    cloud = draw_samples(problem.initial_belief(), n_samples, seed)
    clouds = propagate_cloud(problem.model, cloud, schedule, grid,
                             h=h_sample if h_sample is not None else problem.h / 10.0)
    n_h = len(problem.state_constraints)
    satisfaction = np.zeros((n_h, problem.N))
    for k in range(1, problem.N + 1):
        X = clouds[k].samples
        for i, con in enumerate(problem.state_constraints):
            vals = np.array([con.fun(x) for x in X])
            satisfaction[i, k - 1] = float(np.mean(vals <= 0.0))
    goal_fraction = None
    if goal is not None:
        goal = np.asarray(goal, dtype=float)
        radius = 1.0 if goal_radius is None else float(goal_radius)
        dist = np.linalg.norm(clouds[-1].samples - goal, axis=1)
        goal_fraction = float(np.mean(dist <= radius))
    return McReport(satisfaction=satisfaction, goal_fraction=goal_fraction,
                    n_samples=n_samples, seed=seed)

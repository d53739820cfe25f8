"""Chance-constrained optimal control: rollout, gradients, and small solves."""

import numpy as np
import pytest

from nonsmooth_belief.experiments import implicit_constraint_problem, quadcopter_problem
from nonsmooth_belief.moments import chance_backoff
from nonsmooth_belief.ocp import (
    OcpProblem,
    SolveOptions,
    StateConstraint,
    fd_gradient,
    rollout,
    solve,
    solve_baseline,
    verify_solution_mc,
)
from nonsmooth_belief.ocp import _forward, _probe_values, _stage_map, _stage_map_many
from nonsmooth_belief.systems import GaussianBelief, PiecewiseSmoothModel


def _integrator_problem(N=8, h=0.25, constrained=False):
    """Single integrator in the plane, both modes identical (no surface mass)."""
    model = PiecewiseSmoothModel(
        name="integrator", n_x=2, n_u=2,
        f1=lambda x, u: np.broadcast_to(u, np.shape(x)).astype(float),
        f2=lambda x, u: np.broadcast_to(u, np.shape(x)).astype(float),
        jac_f1=lambda x, u: np.zeros((2, 2)),
        jac_f2=lambda x, u: np.zeros((2, 2)),
        psi=lambda x: np.asarray(x)[..., 1] - 100.0,
        grad_psi=lambda x: np.array([0.0, 1.0]),
        vectorized=True,
    )
    goal = np.array([1.0, 1.0])
    constraints = ()
    if constrained:
        constraints = (StateConstraint("ceiling",
                                       lambda m: float(m[1]) - 0.5,
                                       lambda m: np.array([0.0, 1.0])),)
    return OcpProblem(
        model=model, N=N, h=h,
        stage_cost=lambda m, u: 0.01 * float(np.dot(u, u)),
        terminal_cost=lambda m: float(np.sum((np.asarray(m) - goal) ** 2)),
        u_lower=-2.0 * np.ones(2), u_upper=2.0 * np.ones(2),
        state_constraints=constraints, p_level=0.99,
        mu0=np.zeros(2), Sigma0=0.01 * np.eye(2),
    ), goal


def test_problem_validation():
    problem, _ = _integrator_problem()
    with pytest.raises(ValueError):
        OcpProblem(model=problem.model, N=0, h=0.1,
                   stage_cost=problem.stage_cost, terminal_cost=problem.terminal_cost,
                   u_lower=problem.u_lower, u_upper=problem.u_upper,
                   state_constraints=(), p_level=0.99,
                   mu0=np.zeros(2), Sigma0=np.eye(2))
    with pytest.raises(ValueError):
        OcpProblem(model=problem.model, N=5, h=0.1,
                   stage_cost=problem.stage_cost, terminal_cost=problem.terminal_cost,
                   u_lower=problem.u_lower, u_upper=problem.u_upper,
                   state_constraints=(), p_level=0.4,
                   mu0=np.zeros(2), Sigma0=np.eye(2))


def test_gamma_matches_quantile():
    problem, _ = _integrator_problem()
    assert problem.gamma == pytest.approx(2.3263478740408408, abs=1e-10)


def test_rollout_integrator_mean_is_control_integral():
    problem, _ = _integrator_problem()
    controls = np.tile([0.5, -0.25], (problem.N, 1))
    traj, obj, cons = rollout(problem, controls)
    T = problem.N * problem.h
    assert np.allclose(traj.final.mu, [0.5 * T, -0.25 * T], atol=1e-12)
    # No surface mass and zero state Jacobian: covariance stays put.
    assert np.allclose(traj.final.Sigma, problem.Sigma0, atol=1e-10)
    assert cons.shape == (0, problem.N)


def test_rollout_constraint_values_are_backoffs():
    problem, _ = _integrator_problem(constrained=True)
    controls = np.zeros((problem.N, 2))
    traj, _, cons = rollout(problem, controls)
    for k in range(problem.N):
        b = traj.beliefs[k + 1]
        expected = chance_backoff(float(b.mu[1]) - 0.5, np.array([0.0, 1.0]),
                                  b, problem.gamma)
        assert cons[0, k] == pytest.approx(expected, abs=1e-12)


def test_fd_gradient_on_quadratic():
    g = fd_gradient(lambda x: float(x[0] ** 2 + 3.0 * x[1]), np.array([2.0, 0.0]), 1e-6)
    assert np.allclose(g, [4.0, 3.0], atol=1e-6)


def test_stage_map_many_matches_scalar_stage_map():
    problem, _ = quadcopter_problem()
    rng = np.random.default_rng(2)
    Mus = problem.mu0 + 0.1 * rng.normal(size=(5, 4))
    Sigmas = np.stack([problem.Sigma0 + 0.01 * np.eye(4) for _ in range(5)])
    u = np.array([0.3, -0.2])
    Mo, So = _stage_map_many(problem, Mus, Sigmas, u, "normalization", None)
    for r in range(5):
        b = _stage_map(problem, GaussianBelief(Mus[r], Sigmas[r]), u,
                       "normalization", None)
        assert np.max(np.abs(Mo[r] - b.mu)) <= 1e-10
        assert np.max(np.abs(So[r] - b.Sigma)) <= 1e-10


def test_solve_unconstrained_reaches_goal():
    problem, goal = _integrator_problem()
    sol = solve(problem, np.zeros((problem.N, 2)),
                SolveOptions(inner_maxiter=200))
    assert np.allclose(sol.trajectory.final.mu, goal, atol=0.05)
    assert sol.max_violation == 0.0
    assert sol.objective < 1.0


def test_solve_constrained_respects_backoff():
    problem, _ = _integrator_problem(constrained=True)
    sol = solve(problem, np.zeros((problem.N, 2)),
                SolveOptions(inner_maxiter=200, max_outer=6, constraint_margin=1e-4))
    assert sol.max_violation <= 1e-6
    # Backoff: mu_y + gamma * sigma_y <= 0.5, so the mean stays clear of 0.5.
    sigma_y = np.sqrt(problem.Sigma0[1, 1])
    assert sol.trajectory.final.mu[1] <= 0.5 - problem.gamma * sigma_y + 1e-6


def test_constraint_margin_tightens_but_reports_true_values():
    problem, _ = _integrator_problem(constrained=True)
    opts = SolveOptions(inner_maxiter=200, max_outer=6, constraint_margin=1e-3)
    sol = solve(problem, np.zeros((problem.N, 2)), opts)
    _, _, cons = rollout(problem, sol.controls)
    # The reported violation is measured against the untightened constraints.
    assert sol.max_violation == pytest.approx(
        float(np.max(np.maximum(0.0, cons))), abs=1e-15)
    # The margin absorbs the inner solver's feasibility residual: the returned
    # iterate is strictly inside the original constraint set.
    assert sol.max_violation == 0.0
    assert np.max(cons) < 0.0


def test_wavefront_probes_match_full_restart_finite_differences():
    # The batched tail re-simulation must reproduce, probe by probe, the
    # objective and constraint values of a plain full-restart perturbation.
    problem, _ = quadcopter_problem()
    rng = np.random.default_rng(0)
    u0 = np.clip(rng.normal(size=problem.N * 2),
                 np.tile(problem.u_lower, problem.N),
                 np.tile(problem.u_upper, problem.N))
    step = 1e-6
    objs, cons_all = _probe_values(problem, u0, step, "normalization", None)
    assert objs.shape == (2 * problem.N * 2,)
    for idx in (0, 7, 23, 41, 59):  # a spread of (stage, component, sign) probes
        k, rem = divmod(idx, 2 * problem.n_u)
        j, sgn = divmod(rem, 2)
        u2 = u0.copy()
        u2[k * problem.n_u + j] += step if sgn == 0 else -step
        _, _, cons_ref, obj_ref = _forward(problem, u2, "normalization", None)
        assert objs[idx] == pytest.approx(obj_ref, rel=1e-12, abs=1e-12)
        assert np.max(np.abs(cons_all[idx] - cons_ref)) <= 1e-10


def test_solve_baseline_runs_and_matches_shape():
    problem, params = implicit_constraint_problem()
    sol = solve_baseline(problem, np.zeros((problem.N, 2)),
                         SolveOptions(inner_maxiter=5, max_outer=1),
                         sigma_smooth=float(params["sigma_smooth"]))
    assert sol.controls.shape == (problem.N, 2)
    assert np.isfinite(sol.objective)
    assert sol.diagnostics["propagator"] == "baseline"


def test_verify_solution_mc_counts_goal_hits():
    problem, goal = _integrator_problem()
    sol = solve(problem, np.zeros((problem.N, 2)), SolveOptions(inner_maxiter=200))
    report = verify_solution_mc(problem, sol, n_samples=200, seed=11,
                                goal=goal, goal_radius=1.0)
    assert report.n_samples == 200
    assert report.goal_fraction is not None and report.goal_fraction > 0.95
    assert report.satisfaction.shape == (0, problem.N)


def test_solve_rejects_nonfinite_start():
    problem, _ = _integrator_problem()
    with pytest.raises(ValueError):
        solve(problem, np.full((problem.N, 2), np.nan), SolveOptions())

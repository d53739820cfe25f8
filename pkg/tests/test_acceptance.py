"""End-to-end acceptance gate.

Each test prints one PASS/FAIL line for its criterion (bypassing capture so
the lines appear in a plain ``pytest -v`` run) and then asserts it.  Heavy
experiments are shared through module-scoped fixtures.
"""

import math
import time
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from nonsmooth_belief.experiments import run_experiment, write_result
from nonsmooth_belief.gaussmath import (
    std_normal_cdf,
    trunc_affine_lower,
    trunc_affine_upper,
)
from nonsmooth_belief.integrate import integrate_sample, rk4_joint
from nonsmooth_belief.models import builtin_model
from nonsmooth_belief.montecarlo import exact_reference_1d
from nonsmooth_belief.moments import rhs_pwa, rhs_pwc_1d, rhs_pws
from nonsmooth_belief.systems import (
    GaussianBelief,
    PiecewiseAffineSystem,
    PiecewiseConstant1D,
    affine_as_smooth,
    pwc_as_affine,
)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _report(capsys, number, label, ok):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number} ({label}): {'PASS' if ok else 'FAIL'}")
    assert ok, f"acceptance criterion {number} ({label}) failed"


@pytest.fixture(scope="module")
def spring_registry():
    return run_experiment("spring-dashpot", {})


@pytest.fixture(scope="module")
def spring_small_noise():
    return run_experiment("spring-dashpot", {
        "Sigma0_diag": [2.5e-5, 1.25e-5], "T": 5.2, "steps": 520,
        "knots": 52, "samples": 10_000})


@pytest.fixture(scope="module")
def quadcopter_result():
    return run_experiment("quadcopter", {})


@pytest.fixture(scope="module")
def compare_result():
    return run_experiment("compare-baseline", {})


def test_criterion_1_jump_matrix_scaling(capsys):
    t0 = time.perf_counter()
    model = builtin_model("crossing1d").model  # modes 3 and 1, surface at 0
    finals = []
    t_switch = None
    for x0 in (-3.0, -3.9, -2.1):
        _, states, events = integrate_sample(model, np.array([x0]), None,
                                             2.0, 0.01, switch_tol=1e-10)
        finals.append(float(states[-1][0]))
        if x0 == -3.0:
            t_switch = float(events[0].t_s)
    wall = time.perf_counter() - t0
    pre_spread = 1.8
    post_spread = max(finals) - min(finals)
    ok = (abs(post_spread - pre_spread / 3.0) <= 1e-8
          and abs(t_switch - 1.0) <= 1e-9
          and wall < 1.0)
    _report(capsys, 1, "jump-matrix scaling", ok)


def test_criterion_2_switched_normal_consistency(capsys):
    t0 = time.perf_counter()
    f1, f2, mu0, s0 = 3.0, 1.0, -3.0, 0.3
    # The post-switch branch of the exact reference: mean (f2/f1) mu0 + f2 t
    # with scale |f2/f1| s0.
    mu2_0 = (f2 / f1) * mu0
    s2 = abs(f2 / f1) * s0
    construction_ok = abs(s2 - 0.1) <= 1e-12 and abs(mu2_0 - (-1.0)) <= 1e-12

    pwc = PiecewiseConstant1D(f1, f2)

    def rhs(belief, u):
        md, vd = rhs_pwc_1d(pwc, float(belief.mu[0]), float(belief.Sigma[0, 0]))
        return np.array([md]), np.array([[vd]])

    traj = rk4_joint(rhs, GaussianBelief([mu0], [[s0 * s0]]), None, 2.0, 400)
    errs = []
    for t, b in zip(traj.times, traj.beliefs):
        ref_mean, _ = exact_reference_1d(mu0 + f1 * t, mu2_0 + f2 * t, s0, s2)
        errs.append((float(t), abs(float(b.mu[0]) - ref_mean)))
    # Crossing window: the mode-1 mean within 6 sigma of the surface.
    t_lo, t_hi = (-6.0 * s0 - mu0) / f1, (6.0 * s0 - mu0) / f1
    pre = [e for t, e in errs if t < t_lo]
    post = [e for t, e in errs if t > t_hi]
    drift_ok = (max(pre) - min(pre) <= 1e-6) and (max(post) - min(post) <= 1e-6)
    wall = time.perf_counter() - t0
    _report(capsys, 2, "switched-normal consistency",
            construction_ok and drift_ok and wall < 5.0)


def test_criterion_3_error_scaling_slopes(capsys):
    t0 = time.perf_counter()
    res_sigma = run_experiment("error-sweep-sigma", {})
    res_jump = run_experiment("error-sweep-jump", {})
    wall = time.perf_counter() - t0
    slopes = [res_sigma.summary["slope"],
              res_jump.summary["slope_pos"], res_jump.summary["slope_neg"]]
    ok = all(abs(s - 1.0) <= 0.15 for s in slopes) and wall < 30.0
    _report(capsys, 3, "error-scaling slopes", ok)


def test_criterion_4_oracle_equivalence(capsys, spring_registry, spring_small_noise):
    s = spring_registry.summary
    wall = s["wall_clock_s"] + spring_small_noise.summary["wall_clock_s"]
    # At least two switches of the mean path over the horizon.
    entry = builtin_model("spring_dashpot")
    _, _, events = integrate_sample(entry.model, np.array([2.0, 0.0]), None, 8.0, 0.01)
    envelope_ok = s["max_envelope_ratio_pre_switch"] <= 5.0
    errors_ok = s["max_err_mean"] < 1.0 and s["max_err_cov"] < 1.0
    switches_ok = len(events) >= 2
    # Skewness clause in the small-noise regime where the whole cloud clears
    # the surface quickly: above 0.1 during the crossing, below 0.05 after.
    sk = spring_small_noise.summary["skewness"]
    ts = [r[0] for r in spring_small_noise.rows]
    crossing = max(abs(x) for t, x in zip(ts, sk) if 1.5 <= t <= 2.5)
    quiet = max(abs(x) for t, x in zip(ts, sk) if t >= 4.0)
    skew_ok = crossing > 0.1 and quiet < 0.05
    _report(capsys, 4, "oracle equivalence",
            envelope_ok and errors_ok and switches_ok and skew_ok and wall < 120.0)


def test_criterion_5_consistency_chain(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    worst_scalar = 0.0
    for _ in range(100):
        f1, f2 = rng.normal(size=2)
        if f1 == 0.0 and f2 == 0.0:
            continue
        pwc = PiecewiseConstant1D(f1, f2)
        mu = float(rng.normal())
        v = float(rng.uniform(0.01, 2.0))
        md, vd = rhs_pwc_1d(pwc, mu, v)
        mdot, Sdot = rhs_pwa(pwc_as_affine(pwc), GaussianBelief([mu], [[v]]))
        worst_scalar = max(worst_scalar, abs(md - mdot[0]), abs(vd - Sdot[0, 0]))
    worst_affine = 0.0
    lyap_rel = 0.0
    for _ in range(100):
        sys2 = PiecewiseAffineSystem(
            A1=rng.normal(size=(2, 2)), A2=rng.normal(size=(2, 2)),
            f1bar=rng.normal(size=2), f2bar=rng.normal(size=2),
            g=rng.normal(size=2) + 0.1, xbar=rng.normal(size=2))
        L = rng.normal(size=(2, 2))
        belief = GaussianBelief(mu=rng.normal(size=2), Sigma=L @ L.T + 0.05 * np.eye(2))
        ma, Sa = rhs_pwa(sys2, belief)
        ms, Ss = rhs_pws(affine_as_smooth(sys2), belief, np.zeros(0))
        worst_affine = max(worst_affine, float(np.max(np.abs(ma - ms))),
                           float(np.max(np.abs(Sa - Ss))))
        # Asymptotic Lyapunov recovery 8 projected sigmas into mode 1.
        g = sys2.g
        s_g = math.sqrt(float(g @ belief.Sigma @ g))
        shift = (float(g @ (belief.mu - sys2.xbar)) + 8.0 * s_g) / float(g @ g)
        far = GaussianBelief(mu=belief.mu - shift * g, Sigma=belief.Sigma)
        mf, Sf = rhs_pwa(sys2, far)
        ref_m = sys2.A1 @ far.mu + sys2.f1bar
        ref_S = sys2.A1 @ far.Sigma + far.Sigma @ sys2.A1.T
        scale = max(np.max(np.abs(ref_m)), np.max(np.abs(ref_S)), 1e-30)
        lyap_rel = max(lyap_rel,
                       float(np.max(np.abs(mf - ref_m)) / scale),
                       float(np.max(np.abs(Sf - ref_S)) / scale))
    wall = time.perf_counter() - t0
    ok = (worst_scalar <= 1e-12 and worst_affine <= 1e-8
          and lyap_rel <= 1e-10 and wall < 10.0)
    _report(capsys, 5, "consistency chain", ok)


def test_criterion_6_truncated_affine_kernel(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_rel = 0.0
    worst_sum = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(1000):
            a, b, xb, m = rng.normal(size=4)
            s = float(rng.uniform(0.05, 2.0))
            zb = (xb - m) / s
            ref = quad(lambda z: (a * (m + s * z) + b) * _INV_SQRT_2PI
                       * math.exp(-0.5 * z * z),
                       -np.inf, zb, epsabs=1e-14, epsrel=1e-12)[0]
            lower = trunc_affine_lower(a, b, xb, m, s)
            upper = trunc_affine_upper(a, b, xb, m, s)
            worst_rel = max(worst_rel, abs(lower - ref) / max(abs(ref), 1e-12))
            worst_sum = max(worst_sum, abs(lower + upper - (a * m + b)))
    wall = time.perf_counter() - t0
    ok = worst_rel <= 1e-9 and worst_sum <= 1e-13 and wall < 5.0
    _report(capsys, 6, "truncated-affine kernel", ok)


def test_criterion_7_ocp_feasibility(capsys, quadcopter_result):
    s = quadcopter_result.summary
    p = s["p_level"]
    ok = (s["max_violation"] <= 1e-6
          and s["objective"] < s["objective_zero_controls"]
          and all(v >= p - 0.02 for v in s["mc_min_satisfaction"].values())
          and s["wall_clock_s"] < 300.0)
    _report(capsys, 7, "chance-constrained feasibility", ok)


def _surface_interaction(rows):
    """(psi(mu), projected sigma, mode-1 mass) per knot of a planar trace."""
    out = []
    for r in rows:
        mu = np.array(r[1:3])
        S = np.array(r[3:7]).reshape(2, 2)
        g = np.array([2.0 * mu[0], 1.0])
        psi = float(mu[1] + mu[0] ** 2)
        sd = math.sqrt(max(float(g @ S @ g), 0.0))
        out.append((psi, sd, std_normal_cdf(-psi / max(sd, 1e-300))))
    return out


def test_criterion_8_baseline_pathology(capsys, compare_result):
    s = compare_result.summary
    fractions_ok = (s["goal_fraction_normalization"] > s["goal_fraction_baseline"])
    p_level = 0.99
    kn = _surface_interaction(compare_result.rows)
    kb = _surface_interaction(compare_result.extra_traces["trace_baseline.csv"][1])
    # Clearance comparison at knots where both means are in mode 2 and the
    # surface carries mass above the problem's risk level 1-p for either
    # belief; elsewhere (shared start, hovering at the goal) the propagators
    # coincide and the clearances differ only by optimizer noise.
    risk = 1.0 - p_level
    window = [k for k, ((pn, _, mn), (pb, _, mb)) in enumerate(zip(kn, kb))
              if pn > 0.0 and pb > 0.0 and (mn > risk or mb > risk)]
    clearance_ok = bool(window) and all(kb[k][0] < kn[k][0] for k in window)
    wall_ok = s["wall_clock_s"] < 300.0
    _report(capsys, 8, "baseline pathology", fractions_ok and clearance_ok and wall_ok)


def test_criterion_9_determinism(capsys, tmp_path):
    configs = {
        "crossing1d": {"steps": 100},
        "crossing1d-error": {"steps": 100},
        "error-sweep-sigma": {"n_points": 4, "sigma_min": 1e-2},
        "error-sweep-jump": {"n_points": 5},
        "spring-dashpot": {"steps": 200, "knots": 20, "samples": 500},
        "quadcopter": {"inner_maxiter": 3, "max_outer": 1, "samples": 50},
        "implicit-constraint": {"inner_maxiter": 5, "samples": 20},
        "compare-baseline": {"inner_maxiter": 5, "samples": 10},
    }
    ok = True
    for name, cfg in configs.items():
        dirs = []
        for tag in ("a", "b"):
            res = run_experiment(name, dict(cfg))
            out = tmp_path / name / tag
            write_result(res, out, figures=False)
            dirs.append(out)
        for csv in sorted(dirs[0].glob("*.csv")):
            twin = dirs[1] / csv.name
            if csv.read_bytes() != twin.read_bytes():
                ok = False
    _report(capsys, 9, "byte-identical reruns", ok)

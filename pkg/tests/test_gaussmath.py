"""Scalar Gaussian kernels against scipy and quadrature oracles."""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from nonsmooth_belief.gaussmath import (
    ProjectedBelief,
    project_belief,
    std_normal_cdf,
    std_normal_inv_cdf,
    std_normal_pdf,
    trunc_affine_lower,
    trunc_affine_upper,
)
from nonsmooth_belief.systems import GaussianBelief


def test_pdf_matches_scipy():
    for x in np.linspace(-8.0, 8.0, 33):
        assert std_normal_pdf(float(x)) == pytest.approx(norm.pdf(x), rel=1e-14)


def test_cdf_matches_scipy_including_tails():
    for x in [-37.0, -10.0, -5.0, -1.0, 0.0, 0.5, 3.0, 8.0]:
        assert std_normal_cdf(x) == pytest.approx(norm.cdf(x), rel=1e-13)


def test_cdf_lower_tail_keeps_relative_accuracy():
    # 0.5 * (1 + erf(.)) would be identically 0 here; erfc keeps digits.
    assert std_normal_cdf(-20.0) == pytest.approx(norm.cdf(-20.0), rel=1e-12)
    assert std_normal_cdf(-20.0) > 0.0


def test_inv_cdf_round_trip():
    for p in [1e-12, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.975, 0.99, 1.0 - 1e-10]:
        x = std_normal_inv_cdf(p)
        assert std_normal_cdf(x) == pytest.approx(p, rel=1e-10)


def test_inv_cdf_frozen_quantile():
    # norm.ppf(0.99) computed independently.
    assert std_normal_inv_cdf(0.99) == pytest.approx(2.3263478740408408, abs=1e-12)


def test_inv_cdf_rejects_boundary():
    for p in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(ValueError):
            std_normal_inv_cdf(p)


def test_pdf_cdf_reject_non_finite():
    with pytest.raises(ValueError):
        std_normal_pdf(float("nan"))
    with pytest.raises(ValueError):
        std_normal_cdf(float("inf"))


def test_trunc_affine_against_quadrature():
    # Frozen from an adaptive-quadrature oracle at alpha=2, beta=-1,
    # xibar=0.4, mu=0.1, sigma=0.7.
    assert trunc_affine_lower(2.0, -1.0, 0.4, 0.1, 0.7) == pytest.approx(
        -1.0422173536835784, abs=1e-12)
    assert trunc_affine_upper(2.0, -1.0, 0.4, 0.1, 0.7) == pytest.approx(
        0.24221735368357702, abs=1e-12)


def test_trunc_affine_random_draws_vs_quadrature():
    rng = np.random.default_rng(7)
    for _ in range(25):
        a, b = rng.normal(size=2)
        xb, m = rng.normal(size=2)
        s = float(rng.uniform(0.05, 2.0))
        ref = quad(lambda x: (a * x + b) * norm.pdf(x, m, s), -np.inf, xb,
                   epsabs=1e-13)[0]
        assert trunc_affine_lower(a, b, xb, m, s) == pytest.approx(ref, abs=1e-10)


def test_trunc_affine_halves_sum_to_full_expectation():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a, b, xb, m = rng.normal(size=4)
        s = float(rng.uniform(0.05, 3.0))
        total = (trunc_affine_lower(a, b, xb, m, s)
                 + trunc_affine_upper(a, b, xb, m, s))
        assert total == pytest.approx(a * m + b, abs=1e-13 * max(1.0, abs(a * m + b)))


def test_trunc_affine_rejects_bad_sigma():
    with pytest.raises(ValueError):
        trunc_affine_lower(1.0, 0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        trunc_affine_upper(1.0, 0.0, 0.0, 0.0, -1.0)


def test_project_belief():
    belief = GaussianBelief(mu=np.array([1.0, -2.0]),
                            Sigma=np.array([[2.0, 0.5], [0.5, 1.0]]))
    g = np.array([1.0, 2.0])
    proj = project_belief(g, belief, np.array([0.5, 0.5]))
    assert isinstance(proj, ProjectedBelief)
    assert proj.mu_g == pytest.approx(1.0 - 4.0)
    assert proj.var_g == pytest.approx(g @ belief.Sigma @ g)
    assert proj.xbar_g == pytest.approx(1.5)


def test_project_belief_rejects_zero_direction():
    belief = GaussianBelief(mu=np.zeros(2), Sigma=np.eye(2))
    with pytest.raises(ValueError):
        project_belief(np.zeros(2), belief, np.zeros(2))


def test_project_belief_clips_negative_roundoff_variance():
    Sigma = np.array([[1.0, 1.0], [1.0, 1.0]])  # singular
    belief = GaussianBelief(mu=np.zeros(2), Sigma=Sigma)
    proj = project_belief(np.array([1.0, -1.0]), belief, np.zeros(2))
    assert proj.var_g >= 0.0

"""Closed-form moment dynamics for two-mode systems, plus linearization baselines.

The normalization-based propagators approximate the state distribution by a
normal distribution at every instant, which makes the expectation integrals of
the mean dynamics closed-form for piecewise-affine right-hand sides.  The
covariance dynamics follow from the mean dynamics via

    Sigma_dot = J Sigma + Sigma J',   J = d(mu_dot)/d(mu) at fixed Sigma.

For the affine case J is available in closed form; for the smooth case it is
obtained by central finite differences, validated against the affine closed
form in the tests.
"""

from __future__ import annotations

import math
from typing import Callable, Tuple

import numpy as np
from scipy.special import erfc

from .gaussmath import std_normal_cdf, std_normal_pdf
from .systems import GaussianBelief, PiecewiseAffineSystem, PiecewiseConstant1D, PiecewiseSmoothModel

__all__ = [
    "VAR_FLOOR",
    "rhs_pwc_1d",
    "rhs_pwa",
    "rhs_pws",
    "rhs_pws_batch",
    "baseline_ct",
    "baseline_dt",
    "chance_backoff",
    "fd_jacobian",
]

#: Projected variances below this are treated as a fully one-sided belief.
VAR_FLOOR = 1e-14

_FD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)


def rhs_pwc_1d(model: PiecewiseConstant1D, mu: float, v: float) -> Tuple[float, float]:
    """Mean/variance time derivatives for the scalar piecewise-constant system."""
    if v <= 0.0:
        raise ValueError(f"rhs_pwc_1d: variance must be positive, got {v!r}")
    s = math.sqrt(v)
    z = -mu / s
    Phi = std_normal_cdf(z)
    mu_dot = model.f1bar * Phi + model.f2bar * (1.0 - Phi)
    v_dot = 2.0 * (model.f2bar - model.f1bar) * std_normal_pdf(z) / s * v
    return mu_dot, v_dot


def _pwa_terms(system: PiecewiseAffineSystem, belief: GaussianBelief):
    g = system.g
    Sg = belief.Sigma @ g
    var_g = float(g @ Sg)
    mu_g = float(g @ belief.mu)
    xbar_g = float(g @ system.xbar)
    return g, Sg, var_g, mu_g, xbar_g


def rhs_pwa(system: PiecewiseAffineSystem, belief: GaussianBelief,
            var_floor: float = VAR_FLOOR) -> Tuple[np.ndarray, np.ndarray]:
    """Normalization-based moment dynamics for a piecewise-affine system.

    Below the projected-variance floor the belief is treated as fully inside
    the mode of sign(psi(mu)) and the plain Lyapunov dynamics of that mode are
    returned, which keeps optimizer iterates well defined.
    """
    mu, Sigma = belief.mu, belief.Sigma
    g, Sg, var_g, mu_g, xbar_g = _pwa_terms(system, belief)
    if var_g < var_floor:
        A, fbar = (system.A1, system.f1bar) if mu_g <= xbar_g else (system.A2, system.f2bar)
        mu_dot = A @ mu + fbar
        Sigma_dot = A @ Sigma + Sigma @ A.T
        return mu_dot, 0.5 * (Sigma_dot + Sigma_dot.T)
    s = math.sqrt(var_g)
    d = (xbar_g - mu_g) / s
    pdf_g = std_normal_pdf(d) / s      # projected density at the surface offset
    Phi_g = std_normal_cdf(d)
    f1_mu = system.A1 @ mu + system.f1bar
    f2_mu = system.A2 @ mu + system.f2bar
    dA = system.A2 - system.A1
    mu_dot = dA @ Sg * pdf_g + f1_mu * Phi_g + f2_mu * (1.0 - Phi_g)
    # Closed-form J = d(mu_dot)/d(mu) at fixed Sigma.
    J = (np.outer(dA @ Sg * (d / s) * pdf_g, g)
         + system.A1 * Phi_g + system.A2 * (1.0 - Phi_g)
         + np.outer((f2_mu - f1_mu) * pdf_g, g))
    Sigma_dot = J @ Sigma + Sigma @ J.T
    return mu_dot, 0.5 * (Sigma_dot + Sigma_dot.T)


def _pws_mu_dot(model: PiecewiseSmoothModel, mu: np.ndarray, Sigma: np.ndarray,
                u: np.ndarray, var_floor: float) -> np.ndarray:
    psi = float(model.psi(mu))
    gpsi = np.asarray(model.grad_psi(mu), dtype=float)
    Sg = Sigma @ gpsi
    var_psi = float(gpsi @ Sg)
    if var_psi < var_floor:
        f = model.f1 if psi <= 0.0 else model.f2
        return np.asarray(f(mu, u), dtype=float)
    s = math.sqrt(var_psi)
    d = -psi / s
    pdf_g = std_normal_pdf(d) / s
    Phi_g = std_normal_cdf(d)
    J1 = np.asarray(model.jac_f1(mu, u), dtype=float)
    J2 = np.asarray(model.jac_f2(mu, u), dtype=float)
    f1_mu = np.asarray(model.f1(mu, u), dtype=float)
    f2_mu = np.asarray(model.f2(mu, u), dtype=float)
    return (J2 - J1) @ Sg * pdf_g + f1_mu * Phi_g + f2_mu * (1.0 - Phi_g)


def _field_terms(model: PiecewiseSmoothModel, points: np.ndarray, u: np.ndarray):
    """Batched psi, surface normals, mode fields, and Jacobian difference.

    Uses the model's batched evaluators where their output shape confirms they
    broadcast over the sample axis; otherwise falls back to per-row calls.
    """
    m, n = points.shape
    psi = np.asarray(model.psi(points), dtype=float).reshape(m)
    try:
        G = np.asarray(model.grad_psi(points), dtype=float)
        if G.shape == (n,):
            G = np.broadcast_to(G, (m, n))
        elif G.shape != (m, n):
            raise ValueError
    except Exception:
        G = np.stack([np.asarray(model.grad_psi(x), dtype=float) for x in points])
    F1 = np.asarray(model.f1(points, u), dtype=float).reshape(m, n)
    F2 = np.asarray(model.f2(points, u), dtype=float).reshape(m, n)

    def jac_rows(jac):
        try:
            J = np.asarray(jac(points, u), dtype=float)
            if J.shape == (n, n):
                return np.broadcast_to(J, (m, n, n))
            if J.shape == (m, n, n):
                return J
        except Exception:
            pass
        return np.stack([np.asarray(jac(x, u), dtype=float) for x in points])

    dJ = jac_rows(model.jac_f2) - jac_rows(model.jac_f1)
    return psi, G, F1, F2, dJ


def _blend(psi, Sg, var_psi, F1, F2, dJ, var_floor):
    """Assemble the mode-blended mean dynamics from the batched field terms."""
    s = np.sqrt(np.maximum(var_psi, var_floor))
    d = -psi / s
    pdf_g = _INV_SQRT_2PI * np.exp(-0.5 * d * d) / s
    Phi_g = 0.5 * erfc(-d / _SQRT2)
    out = (np.einsum("rij,rj->ri", dJ, Sg) * pdf_g[:, None]
           + F1 * Phi_g[:, None] + F2 * (1.0 - Phi_g[:, None]))
    degenerate = var_psi < var_floor
    if np.any(degenerate):
        out[degenerate] = np.where(psi[degenerate, None] <= 0.0,
                                   F1[degenerate], F2[degenerate])
    return out


def _pws_mu_dot_batch(model: PiecewiseSmoothModel, points: np.ndarray,
                      Sigma: np.ndarray, u: np.ndarray,
                      var_floor: float) -> np.ndarray:
    """Mean dynamics at several linearization points sharing one Sigma."""
    psi, G, F1, F2, dJ = _field_terms(model, points, u)
    Sg = G @ Sigma
    var_psi = np.einsum("ij,ij->i", G, Sg)
    return _blend(psi, Sg, var_psi, F1, F2, dJ, var_floor)


def rhs_pws_batch(model: PiecewiseSmoothModel, Mus: np.ndarray, Sigmas: np.ndarray,
                  u: np.ndarray, var_floor: float = VAR_FLOOR):
    """rhs_pws over a batch of beliefs sharing one control vector.

    Mus is (B, n) and Sigmas (B, n, n); returns mean and covariance time
    derivatives with the same shapes.  The finite-difference stencils of all
    batch members are evaluated through the model in one call.
    """
    Mus = np.asarray(Mus, dtype=float)
    Sigmas = np.asarray(Sigmas, dtype=float)
    B, n = Mus.shape
    m = 2 * n + 1
    steps = _FD_STEP * np.maximum(1.0, np.abs(Mus))
    stencil = np.repeat(Mus[:, None, :], m, axis=1)
    for i in range(n):
        stencil[:, 1 + 2 * i, i] += steps[:, i]
        stencil[:, 2 + 2 * i, i] -= steps[:, i]
    P = stencil.reshape(B * m, n)
    psi, G, F1, F2, dJ = _field_terms(model, P, np.asarray(u, dtype=float))
    Gb = G.reshape(B, m, n)
    Sg = np.einsum("bmi,bij->bmj", Gb, Sigmas)
    var_psi = np.einsum("bmi,bmi->bm", Gb, Sg).reshape(B * m)
    F = _blend(psi, Sg.reshape(B * m, n), var_psi, F1, F2, dJ,
               var_floor).reshape(B, m, n)
    mu_dot = F[:, 0]
    if not np.all(np.isfinite(mu_dot)):
        raise ValueError(f"rhs_pws_batch: non-finite mean dynamics for model {model.name!r}")
    J = np.empty((B, n, n))
    for i in range(n):
        J[:, :, i] = (F[:, 1 + 2 * i] - F[:, 2 + 2 * i]) / (2.0 * steps[:, i, None])
    JS = np.einsum("bij,bjk->bik", J, Sigmas)
    Sigma_dot = JS + JS.transpose(0, 2, 1)
    return mu_dot, Sigma_dot


def rhs_pws(model: PiecewiseSmoothModel, belief: GaussianBelief, u: np.ndarray,
            var_floor: float = VAR_FLOOR) -> Tuple[np.ndarray, np.ndarray]:
    """Moment dynamics for a piecewise-smooth model via structure-preserving
    linearization at the mean; covariance from the finite-difference Jacobian
    of the mean dynamics."""
    mu, Sigma = belief.mu, belief.Sigma
    u = np.asarray(u, dtype=float)
    n = mu.size
    steps = np.array([_FD_STEP * max(1.0, abs(mu[i])) for i in range(n)])
    if model.vectorized:
        stencil = np.tile(mu, (2 * n + 1, 1))
        for i in range(n):
            stencil[1 + 2 * i, i] += steps[i]
            stencil[2 + 2 * i, i] -= steps[i]
        F = _pws_mu_dot_batch(model, stencil, Sigma, u, var_floor)
        mu_dot = F[0]
        diffs = [(F[1 + 2 * i], F[2 + 2 * i]) for i in range(n)]
    else:
        mu_dot = _pws_mu_dot(model, mu, Sigma, u, var_floor)
        diffs = []
        for i in range(n):
            mp = mu.copy()
            mm = mu.copy()
            mp[i] += steps[i]
            mm[i] -= steps[i]
            diffs.append((_pws_mu_dot(model, mp, Sigma, u, var_floor),
                          _pws_mu_dot(model, mm, Sigma, u, var_floor)))
    if not np.all(np.isfinite(mu_dot)):
        raise ValueError(f"rhs_pws: non-finite mean dynamics for model {model.name!r}")
    J = np.empty((n, n))
    for i, (fp, fm) in enumerate(diffs):
        J[:, i] = (fp - fm) / (2.0 * steps[i])
    Sigma_dot = J @ Sigma + Sigma @ J.T
    return mu_dot, 0.5 * (Sigma_dot + Sigma_dot.T)


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of a vector function, per-coordinate step."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = _FD_STEP * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(fun(xp), dtype=float) - np.asarray(fun(xm), dtype=float)) / (2.0 * h)
    return J


def baseline_ct(model: PiecewiseSmoothModel, belief: GaussianBelief, u: np.ndarray,
                sigma_smooth: float) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous-time linearization baseline on the smoothed dynamics."""
    from .systems import smoothed_rhs

    u = np.asarray(u, dtype=float)
    mu_dot = smoothed_rhs(model, belief.mu, u, sigma_smooth)
    if not np.all(np.isfinite(mu_dot)):
        raise ValueError(f"baseline_ct: non-finite smoothed dynamics for model {model.name!r}")
    G = fd_jacobian(lambda x: smoothed_rhs(model, x, u, sigma_smooth), belief.mu)
    Sigma_dot = G @ belief.Sigma + belief.Sigma @ G.T
    return mu_dot, 0.5 * (Sigma_dot + Sigma_dot.T)


def baseline_dt(discrete_map: Callable[[np.ndarray], np.ndarray],
                belief: GaussianBelief) -> GaussianBelief:
    """Discrete-time linearization baseline: mu+ = f_h(mu), Sigma+ = G Sigma G'."""
    mu_next = np.asarray(discrete_map(belief.mu), dtype=float)
    if not np.all(np.isfinite(mu_next)):
        raise ValueError("baseline_dt: non-finite discrete map output")
    G = fd_jacobian(discrete_map, belief.mu)
    Sigma_next = G @ belief.Sigma @ G.T
    return GaussianBelief(mu=mu_next, Sigma=0.5 * (Sigma_next + Sigma_next.T))


def chance_backoff(h_value: float, grad_h: np.ndarray, belief: GaussianBelief,
                   gamma: float) -> float:
    """Constraint value at the mean plus gamma projected standard deviations.

    The radicand is floored at zero so that indefinite covariance iterates
    inside a solver cannot produce NaN.
    """
    if gamma < 0.0:
        raise ValueError(f"chance_backoff: gamma must be nonnegative, got {gamma!r}")
    grad_h = np.asarray(grad_h, dtype=float)
    rad = float(grad_h @ belief.Sigma @ grad_h)
    return float(h_value) + gamma * math.sqrt(max(rad, 0.0))

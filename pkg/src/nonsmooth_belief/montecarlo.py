"""Sampling-based ground truth: clouds through the nonsmooth integrator,
empirical moments, error metrics, and the exact 1-D switched-normal reference.

Sampling uses the counter-based Philox generator so clouds are bit-reproducible
for a given seed across platforms and execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad

from .gaussmath import std_normal_cdf, std_normal_pdf, trunc_affine_lower, trunc_affine_upper
from .integrate import PiecewiseConstantControl, _control_at, _rk4_step, advance_sample
from .systems import GaussianBelief, PiecewiseSmoothModel

__all__ = [
    "SampleCloud",
    "MomentError",
    "draw_samples",
    "propagate_cloud",
    "empirical_moments",
    "moment_error",
    "exact_reference_1d",
    "switched_normal_mass",
    "crossing_error_final",
    "standard_error_envelope",
    "sample_skewness",
]


@dataclass(frozen=True)
class SampleCloud:
    """Matrix of Monte-Carlo particles (n_samples x n) plus the seed that made it."""

    samples: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "samples", np.atleast_2d(np.asarray(self.samples, dtype=float)))
        if self.samples.shape[0] < 2:
            raise ValueError("SampleCloud: need at least 2 samples")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("SampleCloud: non-finite sample rows")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class MomentError:
    mean_err: float
    cov_err: float


def _psd_sqrt(Sigma: np.ndarray, indef_tol: float = 1e-8) -> np.ndarray:
    """Lower-triangular-ish square root; falls back to an eigendecomposition
    with clipped pivots for semidefinite covariances."""
    try:
        return np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
        if w.min() < -indef_tol:
            raise ValueError(f"draw_samples: covariance eigenvalue {w.min():.3e} "
                             f"below -{indef_tol:.1e}") from None
        return V * np.sqrt(np.clip(w, 0.0, None))


def draw_samples(belief: GaussianBelief, n: int, seed: int) -> SampleCloud:
    """n deterministic draws from N(mu, Sigma) using the Philox bit generator."""
    rng = np.random.Generator(np.random.Philox(seed))
    L = _psd_sqrt(belief.Sigma)
    Z = rng.standard_normal((n, belief.dim))
    return SampleCloud(samples=belief.mu + Z @ L.T, seed=seed)


def empirical_moments(cloud: SampleCloud) -> GaussianBelief:
    """Sample mean and unbiased covariance, symmetrized."""
    X = cloud.samples
    mu = X.mean(axis=0)
    D = X - mu
    Sigma = D.T @ D / (X.shape[0] - 1)
    return GaussianBelief(mu=mu, Sigma=0.5 * (Sigma + Sigma.T))


def moment_error(approx: GaussianBelief, reference: GaussianBelief) -> MomentError:
    return MomentError(
        mean_err=float(np.linalg.norm(approx.mu - reference.mu)),
        cov_err=float(np.linalg.norm(approx.Sigma - reference.Sigma, ord="fro")),
    )


def standard_error_envelope(emp: GaussianBelief, n: int) -> Tuple[float, float]:
    """Sampling standard errors of the empirical moments, as norm envelopes.

    Mean: per-component sqrt(Sigma_ii / n), Euclidean norm.  Covariance entries
    via the Gaussian delta method, SE(S_ij) = sqrt((S_ii S_jj + S_ij^2) / n),
    Frobenius norm.
    """
    d = np.diag(emp.Sigma)
    mean_env = math.sqrt(float(np.sum(d)) / n)
    se_cov = np.sqrt((np.outer(d, d) + emp.Sigma ** 2) / n)
    return mean_env, float(np.linalg.norm(se_cov, ord="fro"))


def sample_skewness(values: np.ndarray) -> float:
    """Biased sample skewness m3 / m2^(3/2) of a 1-D sample."""
    v = np.asarray(values, dtype=float).ravel()
    c = v - v.mean()
    m2 = np.mean(c ** 2)
    if m2 == 0.0:
        return 0.0
    return float(np.mean(c ** 3) / m2 ** 1.5)


# ---------------------------------------------------------------------------
# Cloud propagation through the nonsmooth dynamics
# ---------------------------------------------------------------------------

_SCALAR = 0  # rows handled by the scalar switch-detecting integrator


def _batched_modes(model, X, switch_tol):
    psi = np.asarray(model.psi(X), dtype=float)
    mode = np.where(psi < 0.0, 1, 2)
    mode[np.abs(psi) <= switch_tol] = _SCALAR
    return mode


def propagate_cloud(model: PiecewiseSmoothModel, cloud: SampleCloud, u_schedule,
                    grid: Sequence[float], h: float, switch_tol: float = 1e-10,
                    max_events: int = 10_000) -> List[SampleCloud]:
    """Propagate every row through the nonsmooth dynamics, recording the cloud
    at each grid time.  Row order is preserved; a diverging row raises with its
    row index.

    Rows advance in lockstep with a vectorized RK4 step per mode; rows whose
    step straddles the switching surface (and rows in a sliding mode) fall back
    to the scalar switch-detecting integrator for that step.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0.0):
        raise ValueError("propagate_cloud: grid must be strictly increasing")
    X = cloud.samples.copy()
    m = X.shape[0]
    out: List[SampleCloud] = []
    t = float(grid[0])
    if grid[0] == 0.0:
        out.append(SampleCloud(samples=X.copy(), seed=cloud.seed))
        targets = grid[1:]
    else:
        targets = grid
        t = 0.0

    vector_path = model.vectorized
    mode = _batched_modes(model, X, switch_tol) if vector_path else np.zeros(m, dtype=int)
    sliding = np.zeros(m, dtype=bool)
    events_left = np.full(m, max_events, dtype=int)

    def scalar_rows(rows, t0, t1, u):
        for i in rows:
            try:
                xi, evs, mi, sl = advance_sample(
                    model, X[i], u, t0, t1, h, switch_tol=switch_tol,
                    max_events=int(events_left[i]),
                    mode=None if (mode[i] == _SCALAR or sliding[i]) else int(mode[i]),
                    sliding=bool(sliding[i]))
            except Exception as exc:
                raise RuntimeError(f"propagate_cloud: row {i} failed in [{t0:.6g}, {t1:.6g}]: {exc}") from exc
            X[i] = xi
            events_left[i] -= len(evs)
            sliding[i] = sl
            mode[i] = _SCALAR if (sl or mi is None) else mi

    for t_target in targets:
        # Honor control breakpoints so a step never straddles a control switch.
        seg_edges = [t, t_target]
        if isinstance(u_schedule, PiecewiseConstantControl):
            bps = u_schedule.breakpoints(t_target)
            seg_edges = sorted(set(seg_edges) | {float(b) for b in bps if b > t})
        for t_a, t_b in zip(seg_edges[:-1], seg_edges[1:]):
            u = _control_at(u_schedule, t_a, model.n_u)
            if not vector_path:
                scalar_rows(range(m), t_a, t_b, u)
                continue
            tt = t_a
            while tt < t_b - 1e-15 * max(1.0, abs(t_b)):
                dt = min(h, t_b - tt)
                slow = sliding | (mode == _SCALAR)
                X_prev = X.copy()
                for mk, fk in ((1, model.f1), (2, model.f2)):
                    rows = np.flatnonzero((mode == mk) & ~slow)
                    if rows.size:
                        Xr = X[rows]
                        field = lambda Y: np.asarray(fk(Y, u), dtype=float)
                        X[rows] = _rk4_step(field, Xr, dt)
                psi_new = np.asarray(model.psi(X), dtype=float)
                crossed = (((mode == 1) & (psi_new > switch_tol))
                           | ((mode == 2) & (psi_new < -switch_tol))) & ~slow
                redo = np.flatnonzero(crossed | slow)
                if redo.size:
                    X[redo] = X_prev[redo]
                    scalar_rows(redo, tt, tt + dt, u)
                if not np.all(np.isfinite(X)):
                    bad = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
                    raise RuntimeError(f"propagate_cloud: row {bad} diverged at t={tt + dt:.6g}")
                tt += dt
        t = float(t_target)
        out.append(SampleCloud(samples=X.copy(), seed=cloud.seed))
    return out


# ---------------------------------------------------------------------------
# Exact 1-D switched-normal reference
# ---------------------------------------------------------------------------

def switched_normal_mass(mu1: float, mu2: float, s1: float, s2: float) -> float:
    """Total mass of the (generally unnormalized) switched-normal density."""
    if s1 <= 0.0 or s2 <= 0.0:
        raise ValueError("switched_normal_mass: scales must be positive")
    return std_normal_cdf(-mu1 / s1) + std_normal_cdf(mu2 / s2)


def exact_reference_1d(mu1: float, mu2: float, s1: float, s2: float) -> Tuple[float, float]:
    """Mean and variance of the normalized switched-normal density.

    The density equals N(mu1, s1^2) below zero and N(mu2, s2^2) above; its two
    halves need not integrate to one mid-switch, so the moments are taken after
    normalizing by total mass.  The first moment uses the truncated-affine
    closures, the second adaptive quadrature.
    """
    if s1 <= 0.0 or s2 <= 0.0:
        raise ValueError("exact_reference_1d: scales must be positive")
    mass = switched_normal_mass(mu1, mu2, s1, s2)
    first = (trunc_affine_lower(1.0, 0.0, 0.0, mu1, s1)
             + trunc_affine_upper(1.0, 0.0, 0.0, mu2, s2))
    mean = first / mass

    def lower_pdf(x):
        return std_normal_pdf((x - mu1) / s1) / s1

    def upper_pdf(x):
        return std_normal_pdf((x - mu2) / s2) / s2

    lo, _ = quad(lambda x: x * x * lower_pdf(x), -np.inf, 0.0,
                 epsabs=1e-13, epsrel=1e-10, limit=200)
    hi, _ = quad(lambda x: x * x * upper_pdf(x), 0.0, np.inf,
                 epsabs=1e-13, epsrel=1e-10, limit=200)
    second = (lo + hi) / mass
    return mean, second - mean * mean


def crossing_error_final(f1bar: float, f2bar: float, sigma0: float, mu0: float,
                         T: float, n_steps: Optional[int] = None) -> float:
    """Final mean error of the normalization dynamics against the exact
    switched-normal reference for the scalar piecewise-constant crossing.

    The belief crosses the surface over a time window of order
    sigma0 / max(|f1bar|, |f2bar|); unless n_steps is given, the step count is
    scaled so roughly a hundred steps resolve that window and the integration
    error stays below the model error being measured.
    """
    from .moments import rhs_pwc_1d
    from .systems import PiecewiseConstant1D

    if f1bar == 0.0:
        raise ValueError("crossing_error_final: f1bar must be nonzero")
    if sigma0 <= 0.0:
        raise ValueError("crossing_error_final: sigma0 must be positive")
    fmax = max(abs(f1bar), abs(f2bar))
    if n_steps is None:
        n_steps = max(800, int(math.ceil(100.0 * T * fmax / sigma0)))

    pwc = PiecewiseConstant1D(f1bar, f2bar)
    m, v = mu0, sigma0 * sigma0
    hstep = T / n_steps
    for _ in range(n_steps):
        k1 = rhs_pwc_1d(pwc, m, v)
        k2 = rhs_pwc_1d(pwc, m + 0.5 * hstep * k1[0], v + 0.5 * hstep * k1[1])
        k3 = rhs_pwc_1d(pwc, m + 0.5 * hstep * k2[0], v + 0.5 * hstep * k2[1])
        k4 = rhs_pwc_1d(pwc, m + hstep * k3[0], v + hstep * k3[1])
        m += (hstep / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        v += (hstep / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])

    mu1T = mu0 + f1bar * T
    mu2T = (f2bar / f1bar) * mu0 + f2bar * T
    s2 = abs(f2bar / f1bar) * sigma0
    mean_exact, _ = exact_reference_1d(mu1T, mu2T, sigma0, s2)
    return abs(m - mean_exact)

"""Scalar Gaussian kernels and truncated-affine moment integrals.

Everything here is a pure function of its inputs.  These kernels bound the
accuracy of every downstream moment computation, so the CDF is computed via
erf and the quantile uses a rational seed refined by Newton steps on the CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ProjectedBelief",
    "project_belief",
    "std_normal_pdf",
    "std_normal_cdf",
    "std_normal_inv_cdf",
    "trunc_affine_lower",
    "trunc_affine_upper",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)


def std_normal_pdf(nu: float) -> float:
    """Density of the standard normal distribution at nu."""
    if not math.isfinite(nu):
        raise ValueError(f"std_normal_pdf: non-finite argument {nu!r}")
    return _INV_SQRT_2PI * math.exp(-0.5 * nu * nu)


def std_normal_cdf(nu: float) -> float:
    """Cumulative distribution of the standard normal at nu, via erfc."""
    if not math.isfinite(nu):
        raise ValueError(f"std_normal_cdf: non-finite argument {nu!r}")
    # erfc keeps full relative accuracy in the lower tail, where
    # 0.5 * (1 + erf(...)) would lose all digits to cancellation.
    return 0.5 * math.erfc(-nu / _SQRT2)


# Acklam's rational approximation to the standard normal quantile.
_ACKLAM_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_ACKLAM_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_ACKLAM_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_ACKLAM_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)
_ACKLAM_P_LOW = 0.02425


def _acklam_seed(p: float) -> float:
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    if p < _ACKLAM_P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    if p > 1.0 - _ACKLAM_P_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)


def std_normal_inv_cdf(p: float) -> float:
    """Quantile of the standard normal: rational seed plus two Newton steps."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"std_normal_inv_cdf: p must be in (0, 1), got {p!r}")
    x = _acklam_seed(p)
    for _ in range(2):
        pdf = std_normal_pdf(x)
        if pdf < 1e-300:
            break
        x -= (std_normal_cdf(x) - p) / pdf
    return x


def trunc_affine_lower(alpha: float, beta: float, xibar: float,
                       mu: float, sigma: float) -> float:
    """Integral of (alpha*xi + beta) * N(xi; mu, sigma^2) over xi < xibar."""
    if sigma <= 0.0:
        raise ValueError(f"trunc_affine_lower: sigma must be positive, got {sigma!r}")
    z = (xibar - mu) / sigma
    return -alpha * sigma * std_normal_pdf(z) + (alpha * mu + beta) * std_normal_cdf(z)


def trunc_affine_upper(alpha: float, beta: float, xibar: float,
                       mu: float, sigma: float) -> float:
    """Integral of (alpha*xi + beta) * N(xi; mu, sigma^2) over xi > xibar."""
    if sigma <= 0.0:
        raise ValueError(f"trunc_affine_upper: sigma must be positive, got {sigma!r}")
    z = (xibar - mu) / sigma
    return alpha * sigma * std_normal_pdf(z) + (alpha * mu + beta) * (1.0 - std_normal_cdf(z))


@dataclass(frozen=True)
class ProjectedBelief:
    """1-D image of an n-variate Gaussian belief along a switching direction.

    var_g is the quadratic form g'Sigma g (variance, not standard deviation);
    consumers must floor it at their configured epsilon before dividing.
    """

    mu_g: float
    var_g: float
    xbar_g: float


def project_belief(g: np.ndarray, belief, xbar: np.ndarray) -> ProjectedBelief:
    """Project belief N(mu, Sigma) and the surface point xbar onto direction g."""
    g = np.asarray(g, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    if not np.any(g):
        raise ValueError("project_belief: degenerate direction g = 0")
    mu_g = float(g @ belief.mu)
    var_g = float(g @ belief.Sigma @ g)
    return ProjectedBelief(mu_g=mu_g, var_g=max(var_g, 0.0), xbar_g=float(g @ xbar))

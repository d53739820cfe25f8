"""Two-mode nonsmooth system definitions and right-hand-side evaluation.

Mode convention throughout the package: mode 1 is active where psi(x) < 0,
mode 2 where psi(x) > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ON_SURFACE",
    "GaussianBelief",
    "PiecewiseConstant1D",
    "PiecewiseAffineSystem",
    "PiecewiseSmoothModel",
    "eval_rhs",
    "smoothed_rhs",
    "pwc_as_affine",
    "affine_as_smooth",
]

#: Mode flag returned by eval_rhs when |psi(x)| is within the surface tolerance.
ON_SURFACE = 0

_SYM_TOL = 1e-12
_PSD_TOL = 1e-10


@dataclass(frozen=True)
class GaussianBelief:
    """Mean vector and symmetric PSD covariance; the object every propagator moves."""

    mu: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=float)))
        object.__setattr__(self, "Sigma", np.atleast_2d(np.asarray(self.Sigma, dtype=float)))
        if self.Sigma.shape != (self.mu.size, self.mu.size):
            raise ValueError(f"GaussianBelief: Sigma shape {self.Sigma.shape} does not "
                             f"match state dimension {self.mu.size}")

    @property
    def dim(self) -> int:
        return self.mu.size

    def check(self, sym_tol: float = _SYM_TOL, psd_tol: float = _PSD_TOL) -> None:
        """Raise if Sigma is visibly asymmetric or indefinite."""
        asym = np.max(np.abs(self.Sigma - self.Sigma.T)) if self.dim else 0.0
        if asym > sym_tol:
            raise ValueError(f"GaussianBelief: Sigma asymmetry {asym:.3e} exceeds {sym_tol:.1e}")
        w = np.linalg.eigvalsh(0.5 * (self.Sigma + self.Sigma.T))
        if w.min() < -psd_tol:
            raise ValueError(f"GaussianBelief: Sigma eigenvalue {w.min():.3e} below -{psd_tol:.1e}")


@dataclass(frozen=True)
class PiecewiseConstant1D:
    """Scalar state, velocity f1bar below the origin and f2bar above it."""

    f1bar: float
    f2bar: float

    def __post_init__(self):
        if self.f1bar == 0.0 and self.f2bar == 0.0:
            raise ValueError("PiecewiseConstant1D: both mode velocities are zero")


@dataclass(frozen=True)
class PiecewiseAffineSystem:
    """xdot = A_i x + fibar with the mode decided by the sign of g'(x - xbar)."""

    A1: np.ndarray
    A2: np.ndarray
    f1bar: np.ndarray
    f2bar: np.ndarray
    g: np.ndarray
    xbar: np.ndarray

    def __post_init__(self):
        for name in ("A1", "A2"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("f1bar", "f2bar", "g", "xbar"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        n = self.g.size
        if not np.any(self.g):
            raise ValueError("PiecewiseAffineSystem: switch normal g = 0")
        for name in ("A1", "A2"):
            if getattr(self, name).shape != (n, n):
                raise ValueError(f"PiecewiseAffineSystem: {name} must be {n}x{n}")
        for name in ("f1bar", "f2bar", "xbar"):
            if getattr(self, name).size != n:
                raise ValueError(f"PiecewiseAffineSystem: {name} must have length {n}")

    @property
    def dim(self) -> int:
        return self.g.size

    def psi(self, x: np.ndarray) -> float:
        return float(self.g @ (np.asarray(x, dtype=float) - self.xbar))

    def f1(self, x: np.ndarray) -> np.ndarray:
        return self.A1 @ x + self.f1bar

    def f2(self, x: np.ndarray) -> np.ndarray:
        return self.A2 @ x + self.f2bar


@dataclass(frozen=True)
class PiecewiseSmoothModel:
    """Smooth modes f1, f2 with switching function psi; controls enter as parameters.

    Evaluators receive (x, u) with u an array of length n_u (possibly empty) and
    must be pure.  jac_f1/jac_f2 return the n_x x n_x state Jacobians d f_i / d x.
    Evaluators of the built-in models broadcast over a leading sample axis, which
    the vectorized Monte-Carlo path relies on.
    """

    name: str
    n_x: int
    n_u: int
    f1: Callable[[np.ndarray, np.ndarray], np.ndarray]
    f2: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_f1: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_f2: Callable[[np.ndarray, np.ndarray], np.ndarray]
    psi: Callable[[np.ndarray], float]
    grad_psi: Callable[[np.ndarray], np.ndarray]
    vectorized: bool = False


def eval_rhs(model: PiecewiseSmoothModel, x: np.ndarray, u: np.ndarray,
             surface_tol: float = 0.0):
    """Evaluate the discontinuous right-hand side at a point.

    Returns (xdot, mode) with mode 1 for psi < 0, mode 2 for psi > 0, and
    ON_SURFACE when |psi(x)| <= surface_tol, in which case xdot is the plain
    average of the two modes and the caller decides the Filippov treatment.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    p = float(model.psi(x))
    if abs(p) <= surface_tol:
        xdot = 0.5 * (model.f1(x, u) + model.f2(x, u))
        mode = ON_SURFACE
    elif p < 0.0:
        xdot, mode = model.f1(x, u), 1
    else:
        xdot, mode = model.f2(x, u), 2
    if not np.all(np.isfinite(xdot)):
        raise ValueError(f"eval_rhs: model {model.name!r} returned non-finite output at x={x}")
    return np.asarray(xdot, dtype=float), mode


def smoothed_rhs(model: PiecewiseSmoothModel, x: np.ndarray, u: np.ndarray,
                 sigma_smooth: float) -> np.ndarray:
    """tanh-blended right-hand side; the smoothing baseline."""
    if sigma_smooth <= 0.0:
        raise ValueError(f"smoothed_rhs: sigma_smooth must be positive, got {sigma_smooth!r}")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    alpha = 0.5 * (1.0 + math.tanh(float(model.psi(x)) / sigma_smooth))
    return (1.0 - alpha) * model.f1(x, u) + alpha * model.f2(x, u)


def pwc_as_affine(model: PiecewiseConstant1D) -> PiecewiseAffineSystem:
    """Embed the scalar piecewise-constant system as a piecewise-affine one."""
    return PiecewiseAffineSystem(
        A1=np.zeros((1, 1)), A2=np.zeros((1, 1)),
        f1bar=np.array([model.f1bar]), f2bar=np.array([model.f2bar]),
        g=np.array([1.0]), xbar=np.zeros(1),
    )


def affine_as_smooth(system: PiecewiseAffineSystem,
                     name: str = "affine") -> PiecewiseSmoothModel:
    """Wrap a piecewise-affine system in the smooth-model interface (no controls)."""
    A1, A2 = system.A1, system.A2
    b1, b2 = system.f1bar, system.f2bar
    g, xbar = system.g, system.xbar
    n = system.dim

    def f1(x, u):
        return x @ A1.T + b1

    def f2(x, u):
        return x @ A2.T + b2

    return PiecewiseSmoothModel(
        name=name, n_x=n, n_u=0,
        f1=f1, f2=f2,
        jac_f1=lambda x, u: A1.copy(),
        jac_f2=lambda x, u: A2.copy(),
        psi=lambda x: (np.asarray(x) - xbar) @ g,
        grad_psi=lambda x: g.copy(),
        vectorized=True,
    )

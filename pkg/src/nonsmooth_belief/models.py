"""Registry of the built-in two-mode example models.

Each entry bundles the smooth-model form, the affine/constant special-case
forms where they exist, and the default experiment parameters.  Parameters can
be overridden through ``builtin_model(name, params)``; the returned entry
carries the fully merged parameter set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .systems import (
    PiecewiseAffineSystem,
    PiecewiseConstant1D,
    PiecewiseSmoothModel,
    affine_as_smooth,
    pwc_as_affine,
)

__all__ = ["RegistryEntry", "builtin_model", "model_names"]


@dataclass(frozen=True)
class RegistryEntry:
    name: str
    model: PiecewiseSmoothModel
    affine: Optional[PiecewiseAffineSystem]
    pwc: Optional[PiecewiseConstant1D]
    params: dict


def _merge(defaults: dict, params: Optional[dict]) -> dict:
    merged = dict(defaults)
    if params:
        unknown = set(params) - set(defaults)
        if unknown:
            raise KeyError(f"unknown model parameters: {sorted(unknown)}")
        merged.update(params)
    return merged


def _crossing1d(params):
    p = _merge({
        "f1bar": 3.0, "f2bar": 1.0,
        "mu0": -3.0, "sigma0": 0.3,
        "T": 2.0, "n_steps": 400,
    }, params)
    pwc = PiecewiseConstant1D(f1bar=float(p["f1bar"]), f2bar=float(p["f2bar"]))
    affine = pwc_as_affine(pwc)
    return RegistryEntry("crossing1d", affine_as_smooth(affine, name="crossing1d"),
                         affine, pwc, p)


def _spring_dashpot(params):
    # The contact-impact example comes without numeric constants; these defaults
    # give several contact phases within the default horizon.
    p = _merge({
        "k": 10.0, "c": 0.5, "g_const": 1.0,
        "mu0": (2.0, 0.0), "Sigma0_diag": (0.1, 0.05),
        "T": 8.0, "n_steps": 800, "n_samples": 10_000,
    }, params)
    k, c, g_const = float(p["k"]), float(p["c"]), float(p["g_const"])
    # psi(x) = -x1: mode 1 (psi < 0, x1 > 0) is free flight under the constant
    # push toward the wall, mode 2 (x1 < 0) is spring/dashpot contact.
    affine = PiecewiseAffineSystem(
        A1=np.array([[0.0, 1.0], [0.0, 0.0]]),
        A2=np.array([[0.0, 1.0], [-k, -c]]),
        f1bar=np.array([0.0, -g_const]),
        f2bar=np.zeros(2),
        g=np.array([-1.0, 0.0]),
        xbar=np.zeros(2),
    )
    return RegistryEntry("spring_dashpot", affine_as_smooth(affine, name="spring_dashpot"),
                         affine, None, p)


def _quadcopter(params):
    p = _merge({
        "d": 0.01, "v_w": -1.0, "u_max": 5.0,
        "N": 30, "h": 0.2,
        "mu0": (0.0, 1.0, 5.0, 0.0),
        "Sigma0_diag": (1e-1, 1e-1, 1e-5, 1e-5),
        "p_level": 0.99,
        # The stated p_y lower bound conflicts with the wind-shadow geometry;
        # kept configurable, default -6.
        "p_y_min": -6.0,
        "obstacle_x": 40.0, "obstacle_curv": 0.05,
        "eps_u": 1e-5,
    }, params)
    d, v_w = float(p["d"]), float(p["v_w"])

    def _dyn(x, u, wind):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        vx, vy = x[..., 2], x[..., 3]
        rel = vx - wind
        ux = np.broadcast_to(u[..., 0], vx.shape)
        uy = np.broadcast_to(u[..., 1], vx.shape)
        return np.stack([vx, vy, ux - d * np.abs(rel) * rel, uy], axis=-1)

    def f1(x, u):
        return _dyn(x, u, 0.0)

    def f2(x, u):
        return _dyn(x, u, v_w)

    def _jac(x, wind):
        x = np.asarray(x, dtype=float)
        J = np.zeros(x.shape[:-1] + (4, 4))
        J[..., 0, 2] = 1.0
        J[..., 1, 3] = 1.0
        J[..., 2, 2] = -2.0 * d * np.abs(x[..., 2] - wind)
        return J

    def jac_f1(x, u):
        return _jac(x, 0.0)

    def jac_f2(x, u):
        return _jac(x, v_w)

    model = PiecewiseSmoothModel(
        name="quadcopter", n_x=4, n_u=2,
        f1=f1, f2=f2, jac_f1=jac_f1, jac_f2=jac_f2,
        psi=lambda x: np.asarray(x)[..., 1],
        grad_psi=lambda x: np.array([0.0, 1.0, 0.0, 0.0]),
        vectorized=True,
    )
    return RegistryEntry("quadcopter", model, None, None, p)


def _implicit_constraint(params):
    p = _merge({
        "u_max": 2.0,
        "pull": (4.5, 5.0),
        "goal": (6.0, -2.0),
        "mu0": (-6.5, -2.0),
        "Sigma0_diag": (0.25, 0.25),
        "N": 15, "h": 0.5,
        "p_level": 0.99,
        "eps_H": np.sqrt(0.5), "eps_u": 1e-5,
        "goal_radius": 1.0,
        "sigma_smooth": 5e-2,
    }, params)
    u_max = float(p["u_max"])
    pull = u_max * np.asarray(p["pull"], dtype=float)

    # psi(x) = p_y + p_x^2: the region below the downward parabola (psi < 0)
    # carries the strong vector field and acts like an implicit obstacle; the
    # start and the goal both lie in mode 2 where the controls act directly.
    def f1(x, u):
        return np.broadcast_to(u, np.shape(x)).astype(float) - pull

    def f2(x, u):
        return np.broadcast_to(u, np.shape(x)).astype(float) + 0.0

    model = PiecewiseSmoothModel(
        name="implicit_constraint", n_x=2, n_u=2,
        f1=f1, f2=f2,
        jac_f1=lambda x, u: np.zeros((2, 2)),
        jac_f2=lambda x, u: np.zeros((2, 2)),
        psi=lambda x: np.asarray(x)[..., 1] + np.asarray(x)[..., 0] ** 2,
        grad_psi=lambda x: np.stack([2.0 * np.asarray(x, dtype=float)[..., 0],
                                     np.ones(np.shape(x)[:-1])], axis=-1),
        vectorized=True,
    )
    return RegistryEntry("implicit_constraint", model, None, None, p)


_BUILDERS = {
    "crossing1d": _crossing1d,
    "spring_dashpot": _spring_dashpot,
    "quadcopter": _quadcopter,
    "implicit_constraint": _implicit_constraint,
}


def model_names() -> list[str]:
    return sorted(_BUILDERS)


def builtin_model(name: str, params: Optional[dict] = None) -> RegistryEntry:
    """Look up a built-in model by name, optionally overriding its parameters."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; available: {model_names()}") from None
    return builder(params)

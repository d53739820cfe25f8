"""Fixed-step RK4 integration of the joint (mu, Sigma) ODE and switch-detecting
integration of individual nonsmooth sample trajectories.

Switch times are localized by bisection on the RK4 partial step, which keeps
|psi| at the event below an explicit tolerance.  Sliding segments integrate the
Filippov convex combination and are re-anchored onto the surface after each
step so drift cannot accumulate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .systems import GaussianBelief, PiecewiseSmoothModel

__all__ = [
    "BeliefTrajectory",
    "SwitchEvent",
    "PiecewiseConstantControl",
    "DivergenceError",
    "EventBudgetError",
    "RegularityError",
    "rk4_joint",
    "integrate_sample",
    "advance_sample",
    "filippov_theta",
    "jump_matrix",
]

CROSSING_1TO2 = "crossing_1to2"
CROSSING_2TO1 = "crossing_2to1"
SLIDING_ENTRY = "sliding_entry"
SLIDING_EXIT = "sliding_exit"

_DEG_TOL = 1e-14


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state; carries the last valid time."""

    def __init__(self, message: str, t_last: float):
        super().__init__(message)
        self.t_last = t_last


class EventBudgetError(RuntimeError):
    pass


class RegularityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SwitchEvent:
    t_s: float
    x_s: np.ndarray
    kind: str


@dataclass(frozen=True)
class BeliefTrajectory:
    """Time grid and one Gaussian belief per knot."""

    times: np.ndarray
    beliefs: Tuple[GaussianBelief, ...]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "beliefs", tuple(self.beliefs))
        if times.size != len(self.beliefs):
            raise ValueError("BeliefTrajectory: times and beliefs length mismatch")
        if times.size > 1 and np.any(np.diff(times) <= 0.0):
            raise ValueError("BeliefTrajectory: times must be strictly increasing")

    def means(self) -> np.ndarray:
        return np.array([b.mu for b in self.beliefs])

    def covariances(self) -> np.ndarray:
        return np.array([b.Sigma for b in self.beliefs])

    @property
    def final(self) -> GaussianBelief:
        return self.beliefs[-1]


class PiecewiseConstantControl:
    """Zero-order-hold control schedule on an equidistant grid."""

    def __init__(self, values: np.ndarray, h: float, t0: float = 0.0):
        self.values = np.atleast_2d(np.asarray(values, dtype=float))
        if h <= 0.0:
            raise ValueError("PiecewiseConstantControl: step must be positive")
        self.h = float(h)
        self.t0 = float(t0)

    @property
    def n_u(self) -> int:
        return self.values.shape[1]

    def breakpoints(self, t_end: float) -> np.ndarray:
        k = np.arange(1, self.values.shape[0])
        ts = self.t0 + k * self.h
        return ts[(ts > self.t0) & (ts < t_end)]

    def __call__(self, t: float) -> np.ndarray:
        idx = int(math.floor((t - self.t0) / self.h + 1e-12))
        idx = min(max(idx, 0), self.values.shape[0] - 1)
        return self.values[idx]


def _control_at(u_schedule, t: float, n_u: int) -> np.ndarray:
    if u_schedule is None:
        return np.zeros(n_u)
    return np.asarray(u_schedule(t), dtype=float)


def rk4_joint(rhs: Callable[[GaussianBelief, np.ndarray], Tuple[np.ndarray, np.ndarray]],
              belief0: GaussianBelief, u_schedule, T: float, n_steps: int,
              n_u: int = 0) -> BeliefTrajectory:
    """Classic RK4 on the stacked (mu, vec(Sigma)) state.

    rhs(belief, u) must return (mu_dot, Sigma_dot).  Sigma is symmetrized after
    every step.  The returned trajectory includes the initial belief.
    """
    if n_steps < 1:
        raise ValueError("rk4_joint: n_steps must be >= 1")
    n = belief0.dim
    h = T / n_steps

    def deriv(t, mu, Sigma):
        u = _control_at(u_schedule, t, n_u)
        mu_dot, Sigma_dot = rhs(GaussianBelief(mu=mu, Sigma=Sigma), u)
        return np.asarray(mu_dot, dtype=float), np.asarray(Sigma_dot, dtype=float)

    times = [0.0]
    beliefs = [belief0]
    mu = belief0.mu.copy()
    Sigma = belief0.Sigma.copy()
    for k in range(n_steps):
        t = k * h
        try:
            k1m, k1S = deriv(t, mu, Sigma)
            k2m, k2S = deriv(t + 0.5 * h, mu + 0.5 * h * k1m, Sigma + 0.5 * h * k1S)
            k3m, k3S = deriv(t + 0.5 * h, mu + 0.5 * h * k2m, Sigma + 0.5 * h * k2S)
            k4m, k4S = deriv(t + h, mu + h * k3m, Sigma + h * k3S)
        except (ValueError, FloatingPointError) as exc:
            raise DivergenceError(f"rk4_joint: dynamics evaluation failed at t={t:.6g}: {exc}",
                                  t_last=t) from exc
        mu = mu + (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
        Sigma = Sigma + (h / 6.0) * (k1S + 2.0 * k2S + 2.0 * k3S + k4S)
        Sigma = 0.5 * (Sigma + Sigma.T)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(Sigma))):
            raise DivergenceError(f"rk4_joint: non-finite state after step to t={t + h:.6g}",
                                  t_last=t)
        times.append((k + 1) * h)
        beliefs.append(GaussianBelief(mu=mu.copy(), Sigma=Sigma.copy()))
    return BeliefTrajectory(times=np.array(times), beliefs=beliefs)


def _rk4_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _switch_rates(model: PiecewiseSmoothModel, x: np.ndarray, u: np.ndarray) -> Tuple[float, float, np.ndarray]:
    gpsi = np.asarray(model.grad_psi(x), dtype=float)
    if not np.any(gpsi):
        raise RegularityError(f"grad_psi vanishes on the switching surface at x={x}")
    w1 = float(gpsi @ model.f1(x, u))
    w2 = float(gpsi @ model.f2(x, u))
    return w1, w2, gpsi


def filippov_theta(model: PiecewiseSmoothModel, x: np.ndarray,
                   u: Optional[np.ndarray] = None) -> float:
    """Convex weight making (1-theta) f1 + theta f2 tangent to the surface."""
    x = np.asarray(x, dtype=float)
    if u is None:
        u = np.zeros(model.n_u)
    w1, w2, _ = _switch_rates(model, x, u)
    denom = w1 - w2
    if abs(denom) < _DEG_TOL:
        raise RegularityError(f"filippov_theta: degenerate sliding denominator {denom:.3e}")
    return w1 / denom


def jump_matrix(model: PiecewiseSmoothModel, x_s: np.ndarray, kind: str,
                u: Optional[np.ndarray] = None, surface_tol: float = 1e-8) -> np.ndarray:
    """Sensitivity jump matrix at a switch point."""
    x_s = np.asarray(x_s, dtype=float)
    if u is None:
        u = np.zeros(model.n_u)
    if abs(float(model.psi(x_s))) > surface_tol:
        raise ValueError(f"jump_matrix: x_s is not on the switching surface "
                         f"(|psi|={abs(float(model.psi(x_s))):.3e} > {surface_tol:.1e})")
    f1 = np.asarray(model.f1(x_s, u), dtype=float)
    f2 = np.asarray(model.f2(x_s, u), dtype=float)
    w1, w2, gpsi = _switch_rates(model, x_s, u)
    n = x_s.size
    if kind == CROSSING_1TO2:
        denom = w1
        num = np.outer(f2 - f1, gpsi)
    elif kind == CROSSING_2TO1:
        # Reverse crossing: the roles of the two modes are exchanged.
        denom = w2
        num = np.outer(f1 - f2, gpsi)
    elif kind == SLIDING_ENTRY:
        denom = w1 - w2
        num = np.outer(f2 - f1, gpsi)
    else:
        raise ValueError(f"jump_matrix: unknown switch kind {kind!r}")
    if abs(denom) < _DEG_TOL:
        raise RegularityError(f"jump_matrix: tangential contact, denominator {denom:.3e}")
    return np.eye(n) + num / denom


def _project_to_surface(model: PiecewiseSmoothModel, x: np.ndarray,
                        tol: float, max_iter: int = 3) -> np.ndarray:
    for _ in range(max_iter):
        p = float(model.psi(x))
        if abs(p) <= tol:
            return x
        gpsi = np.asarray(model.grad_psi(x), dtype=float)
        nrm2 = float(gpsi @ gpsi)
        if nrm2 < _DEG_TOL:
            raise RegularityError("sliding projection: grad_psi vanished")
        x = x - (p / nrm2) * gpsi
    return x


class _SampleState:
    """Mutable integration state for one nonsmooth sample trajectory."""

    __slots__ = ("x", "t", "mode", "sliding", "events", "max_events", "switch_tol")

    def __init__(self, x0, t0, mode, sliding, max_events, switch_tol):
        self.x = np.asarray(x0, dtype=float).copy()
        self.t = float(t0)
        self.mode = mode
        self.sliding = sliding
        self.events: List[SwitchEvent] = []
        self.max_events = max_events
        self.switch_tol = switch_tol

    def record(self, t_s, x_s, kind):
        if len(self.events) >= self.max_events:
            raise EventBudgetError(f"switch-event budget of {self.max_events} exhausted "
                                   f"at t={t_s:.6g}")
        self.events.append(SwitchEvent(t_s=t_s, x_s=np.asarray(x_s, dtype=float).copy(), kind=kind))


def _classify(model, x_s, u, from_mode, switch_tol):
    w1, w2, _ = _switch_rates(model, x_s, u)
    if w1 > 0.0 and w2 < 0.0:
        return SLIDING_ENTRY, None
    if from_mode == 1:
        if w1 > 0.0 and w2 > 0.0:
            return CROSSING_1TO2, 2
        if abs(w1) < _DEG_TOL:
            raise RegularityError(f"tangential contact at x={x_s} (grad_psi' f1 ~ 0)")
    else:
        if w1 < 0.0 and w2 < 0.0:
            return CROSSING_2TO1, 1
        if abs(w2) < _DEG_TOL:
            raise RegularityError(f"tangential contact at x={x_s} (grad_psi' f2 ~ 0)")
    # The field carried the state onto the surface but immediately pushes it
    # back: treat as a grazing touch and stay in the current mode.
    return None, from_mode


def _mode_of(model, x, switch_tol):
    p = float(model.psi(x))
    if p < -switch_tol:
        return 1, False
    if p > switch_tol:
        return 2, False
    return None, True  # on the surface; classified by the caller


def _advance_in_mode(model, st: _SampleState, u, dt):
    """One nominal step in the current smooth mode, with switch localization."""
    f = model.f1 if st.mode == 1 else model.f2
    field = lambda x: np.asarray(f(x, u), dtype=float)
    x_new = _rk4_step(field, st.x, dt)
    if not np.all(np.isfinite(x_new)):
        raise DivergenceError(f"integrate_sample: non-finite state at t={st.t + dt:.6g}",
                              t_last=st.t)
    p_new = float(model.psi(x_new))
    crossed = (p_new > st.switch_tol) if st.mode == 1 else (p_new < -st.switch_tol)
    if not crossed:
        st.x = x_new
        st.t += dt
        return
    # Bisect the step fraction until |psi| <= switch_tol at the partial step.
    lo, hi = 0.0, 1.0
    s_star = 1.0
    x_s = x_new
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        x_mid = _rk4_step(field, st.x, mid * dt)
        p_mid = float(model.psi(x_mid))
        s_star, x_s = mid, x_mid
        if abs(p_mid) <= st.switch_tol:
            break
        if (p_mid < 0.0) if st.mode == 1 else (p_mid > 0.0):
            lo = mid
        else:
            hi = mid
    t_s = st.t + s_star * dt
    kind, new_mode = _classify(model, x_s, u, st.mode, st.switch_tol)
    dt_rest = (1.0 - s_star) * dt
    st.x = x_s
    st.t = t_s
    if kind == SLIDING_ENTRY:
        st.record(t_s, x_s, SLIDING_ENTRY)
        st.sliding = True
        if dt_rest > 0.0:
            _advance_sliding(model, st, u, dt_rest)
        return
    if kind is not None:
        st.record(t_s, x_s, kind)
        st.mode = new_mode
    if dt_rest > 0.0:
        if st.sliding:
            _advance_sliding(model, st, u, dt_rest)
        else:
            _advance_in_mode(model, st, u, dt_rest)


def _advance_sliding(model, st: _SampleState, u, dt):
    """One nominal step on the Filippov sliding field, with exit localization."""

    def field(x):
        w1, w2, _ = _switch_rates(model, x, u)
        denom = w1 - w2
        if abs(denom) < _DEG_TOL:
            raise RegularityError("sliding field: degenerate denominator")
        theta = w1 / denom
        return (1.0 - theta) * np.asarray(model.f1(x, u), dtype=float) \
            + theta * np.asarray(model.f2(x, u), dtype=float)

    def trapped_margin(x):
        w1, w2, _ = _switch_rates(model, x, u)
        return min(w1, -w2)

    if trapped_margin(st.x) <= 0.0:
        _exit_sliding(model, st, u, st.x, st.t)
        if not st.sliding:
            _advance_in_mode(model, st, u, dt)
            return
    x_new = _project_to_surface(model, _rk4_step(field, st.x, dt), 10.0 * st.switch_tol)
    if trapped_margin(x_new) > 0.0:
        st.x = x_new
        st.t += dt
        return
    # Locate where the trapped condition ceases to hold.
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        x_mid = _project_to_surface(model, _rk4_step(field, st.x, mid * dt), 10.0 * st.switch_tol)
        if trapped_margin(x_mid) > 0.0:
            lo = mid
        else:
            hi = mid
    x_exit = _project_to_surface(model, _rk4_step(field, st.x, hi * dt), 10.0 * st.switch_tol)
    t_exit = st.t + hi * dt
    dt_rest = (1.0 - hi) * dt
    st.x = x_exit
    st.t = t_exit
    _exit_sliding(model, st, u, x_exit, t_exit)
    if dt_rest > 0.0:
        if st.sliding:
            _advance_sliding(model, st, u, dt_rest)
        else:
            _advance_in_mode(model, st, u, dt_rest)


def _exit_sliding(model, st: _SampleState, u, x, t):
    w1, w2, _ = _switch_rates(model, x, u)
    if w1 > 0.0 and w2 < 0.0:
        return  # still trapped
    st.record(t, x, SLIDING_EXIT)
    st.sliding = False
    st.mode = 2 if w2 >= 0.0 else 1


def advance_sample(model: PiecewiseSmoothModel, x0: np.ndarray, u: np.ndarray,
                   t0: float, t1: float, h: float, switch_tol: float = 1e-10,
                   max_events: int = 10_000, mode: Optional[int] = None,
                   sliding: bool = False):
    """Advance one sample from t0 to t1 with constant control u.

    Returns (x_end, events, mode, sliding).  The caller may thread mode and
    sliding through consecutive segments to avoid re-classifying the state.
    """
    x0 = np.asarray(x0, dtype=float)
    u = np.asarray(u, dtype=float)
    if mode is None and not sliding:
        mode, on_surface = _mode_of(model, x0, switch_tol)
        if on_surface:
            kind, new_mode = _classify(model, x0, u, 1, switch_tol)
            if kind == SLIDING_ENTRY:
                sliding, mode = True, None
            else:
                w1, w2, _ = _switch_rates(model, x0, u)
                mode = 2 if (w1 + w2) > 0.0 else 1
    st = _SampleState(x0, t0, mode, sliding, max_events, switch_tol)
    remaining = t1 - t0
    while remaining > 1e-15 * max(1.0, abs(t1)):
        dt = min(h, remaining)
        if st.sliding:
            _advance_sliding(model, st, u, dt)
        else:
            _advance_in_mode(model, st, u, dt)
        remaining = t1 - st.t
    return st.x, st.events, st.mode, st.sliding


def integrate_sample(model: PiecewiseSmoothModel, x0: np.ndarray, u_schedule,
                     T: float, h: float, switch_tol: float = 1e-10,
                     max_events: int = 10_000):
    """Switch-detecting RK4 integration of one nonsmooth trajectory.

    Returns (times, states, events) with the nominal step grid as the time
    grid.  Control-schedule breakpoints are honored exactly so that a step
    never straddles a control switch.
    """
    if h <= 0.0:
        raise ValueError("integrate_sample: step h must be positive")
    x0 = np.asarray(x0, dtype=float)
    grid = [0.0]
    n_whole = int(math.ceil(T / h - 1e-12))
    grid.extend(min(k * h, T) for k in range(1, n_whole + 1))
    if grid[-1] < T:
        grid.append(T)
    if isinstance(u_schedule, PiecewiseConstantControl):
        bps = u_schedule.breakpoints(T)
        grid = sorted(set(grid) | {float(b) for b in bps})
    times = [0.0]
    states = [x0.copy()]
    events: List[SwitchEvent] = []
    x = x0
    mode: Optional[int] = None
    sliding = False
    for t_a, t_b in zip(grid[:-1], grid[1:]):
        u = _control_at(u_schedule, t_a, model.n_u)
        x, evs, mode, sliding = advance_sample(
            model, x, u, t_a, t_b, h, switch_tol=switch_tol,
            max_events=max_events - len(events), mode=mode, sliding=sliding)
        events.extend(evs)
        times.append(t_b)
        states.append(x.copy())
    return np.array(times), np.array(states), events

"""Point-charge deceleration under the quasi-static stopping force.

The charge obeys Vdot = -alpha A(|V|) V/|V|^3, Xdot = V, with A(|V|) from a
cubic-spline table of the stopping coefficient. For constant A the speed is
|V(t)| = (V0^3 - 3 alpha A t)^{1/3}; the envelope checks verify the
deceleration brackets

    -alpha A_max / |V| <= Vdot . V <= -alpha A_min / |V|
    (V0^3 - 1 - 3 alpha A_max t)^{1/3} <= |V(t)| <= (V0^3 + 1 - 3 alpha A_min t)^{1/3}

with an initial layer t <= 8 V0^{-3/5} excluded from the pointwise check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .profiles import Profile
from .response import force_steadystate

__all__ = ["Trajectory", "build_stopping_table", "decelerate", "envelope_check"]

INITIAL_LAYER_FACTOR = 8.0


@dataclass
class Trajectory:
    t: np.ndarray
    X: np.ndarray          # (n, 3)
    V: np.ndarray          # (n, 3)
    F: np.ndarray          # (n, 3) force samples -alpha A V/|V|^3
    stop_reason: str       # reached_threshold | reached_logbound | support_violation | t_end
    A_min: float = 0.0     # table extremes over the traversed speed range
    A_max: float = 0.0


def build_stopping_table(profile: Profile, v_lo: float, v_hi: float,
                         n_nodes: int = 12, route: str = "steadystate"):
    """Cubic spline of A(|V|) on log-spaced speed nodes (n_nodes >= 12)."""
    if n_nodes < 12:
        raise ValueError("stopping table needs at least 12 nodes")
    speeds = np.geomspace(v_lo, v_hi, n_nodes)
    if route != "steadystate":
        raise ValueError("table construction uses the steadystate route")
    if profile.mu_kind == "empty":
        return CubicSpline(speeds, np.zeros_like(speeds))
    A = np.array([force_steadystate(profile, [v, 0.0, 0.0]).A_est for v in speeds])
    return CubicSpline(speeds, A)


def decelerate(profile: Profile, V0: float, t_end: float, dt: float,
               a_table=None, v_stop_threshold: float | None = None,
               log_exponent: float = 2.0, store_every: int = 1) -> Trajectory:
    """RK4 integration of the deceleration ODE along e1.

    a_table maps |V| -> A; defaults to a fresh steadystate table spanning
    [threshold/1.2, 1.2 V0]. Stops early when |V| crosses the configured
    threshold, the log^n V0 floor, or 5 * support speed.
    """
    if v_stop_threshold is None:
        v_stop_threshold = max(2.0 * profile.support_speed, 1.0)
    if V0 <= v_stop_threshold:
        raise ValueError("V0 must exceed the stop threshold")
    if a_table is None:
        a_table = build_stopping_table(profile, v_stop_threshold / 1.2, 1.2 * V0)
    alpha = profile.alpha
    v_log_floor = math.log(max(V0, math.e)) ** log_exponent
    v_support_floor = 5.0 * profile.support_speed

    def accel(v):
        speed = np.linalg.norm(v)
        return -alpha * float(a_table(speed)) / speed**3 * v

    n = int(math.ceil(t_end / dt))
    ts, Xs, Vs, Fs = [0.0], [np.zeros(3)], [np.array([V0, 0.0, 0.0])], []
    Fs.append(accel(Vs[0]))
    x = Xs[0].copy()
    v = Vs[0].copy()
    stop_reason = "t_end"
    speeds_seen = [V0]
    for i in range(n):
        h = min(dt, t_end - i * dt)
        k1x, k1v = v, accel(v)
        k2x, k2v = v + 0.5 * h * k1v, accel(v + 0.5 * h * k1v)
        k3x, k3v = v + 0.5 * h * k2v, accel(v + 0.5 * h * k2v)
        k4x, k4v = v + h * k3v, accel(v + h * k3v)
        x = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        t_now = (i + 1) * dt if (i + 1) * dt < t_end else t_end
        speed = float(np.linalg.norm(v))
        speeds_seen.append(speed)
        if (i + 1) % store_every == 0 or t_now == t_end:
            ts.append(t_now)
            Xs.append(x.copy())
            Vs.append(v.copy())
            Fs.append(accel(v))
        if speed <= v_stop_threshold:
            stop_reason = "reached_threshold"
            break
        if speed <= v_log_floor:
            stop_reason = "reached_logbound"
            break
        if speed <= v_support_floor:
            stop_reason = "support_violation"
            break
    lo, hi = min(speeds_seen), max(speeds_seen)
    a_nodes = a_table(np.linspace(lo, hi, 200))
    return Trajectory(t=np.array(ts), X=np.array(Xs), V=np.array(Vs),
                      F=np.array(Fs[: len(ts)]), stop_reason=stop_reason,
                      A_min=float(np.min(a_nodes)), A_max=float(np.max(a_nodes)))


def envelope_check(trajectory: Trajectory, A_min: float, A_max: float,
                   alpha: float = 1.0, slack: float = 1e-9) -> dict:
    """Pointwise deceleration bracket and the cube-root speed envelope.

    Returns {"passed": bool, "first_violation_t": float | None, "kind": str}.
    Samples before the initial layer 8 V0^{-3/5} are skipped.
    """
    t = trajectory.t
    V = trajectory.V
    speed = np.linalg.norm(V, axis=1)
    V0 = speed[0]
    t_layer = INITIAL_LAYER_FACTOR * V0 ** (-0.6)

    vdot_v = np.einsum("ij,ij->i", trajectory.F, V)
    lo_rate = -alpha * A_max / speed - slack
    hi_rate = -alpha * A_min / speed + slack

    lo_env = np.cbrt(np.maximum(V0**3 - 1.0 - 3.0 * alpha * A_max * t, 0.0)) - slack
    hi_env = np.cbrt(V0**3 + 1.0 - 3.0 * alpha * A_min * t) + slack

    active = t > t_layer
    bad_rate = active & ((vdot_v < lo_rate) | (vdot_v > hi_rate))
    bad_env = (speed < lo_env) | (speed > hi_env)
    bad = bad_rate | bad_env
    if not np.any(bad):
        return {"passed": True, "first_violation_t": None, "kind": ""}
    i = int(np.argmax(bad))
    kind = "rate" if bad_rate[i] else "envelope"
    return {"passed": False, "first_violation_t": float(t[i]), "kind": kind}

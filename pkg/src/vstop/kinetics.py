"""Characteristics machinery: backward flows, scattering geometry, straightening,
source terms and the trajectory-weighted norm.

Backward characteristics under the total field Ebar = E + e0 grad Phi(. - X(t)):

    d/ds X_{s,t} = V_{s,t},  d/ds V_{s,t} = Ebar(s, X_{s,t}),  terminal (x, v) at s = t,

with deviations Ytilde = X_{s,t} - (x - (t-s)v) and Wtilde = V_{s,t} - v.

Geometry relative to the charge's first coordinate: the passage time tau_x
solves X1(tau) = x1; the collision time T solves X1(tau) = x1 - (t - tau) v1;
the impact point is x - [t - T]_+ v. Regions follow the classification used
for straightening: ahead of the charge, post-collision, small-transverse-time
(K), and large-impact-parameter (F).

The straightening map Psi(x, .) is the fixed point of
v -> v_target + Ytilde_{s,t}(x, v)/(t - s) and satisfies
X_{s,t}(x, Psi) = x - (t-s) v_target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicHermiteSpline
from scipy.special import j0, j1

from .profiles import Phi_grad, Phi_hat, Profile, mu_grad, phi_hat

__all__ = [
    "FieldSampler",
    "ChargeTrajectory",
    "GeometrySample",
    "CharResult",
    "zero_field",
    "constant_field",
    "synthetic_field",
    "linear_response_field",
    "integrate_characteristics",
    "geometry",
    "straighten",
    "straighten_batch",
    "reaction_term",
    "charge_source",
    "charge_source_linearized",
    "yt_norm",
    "sphere_design_26",
]


# ---------------------------------------------------------------------------
# field samplers
# ---------------------------------------------------------------------------

@dataclass
class FieldSampler:
    """Pair of callables E(t, x) -> (N,3) and gradE(t, x) -> (N,3,3)."""
    E: object
    gradE: object
    provenance: str = "synthetic"


def zero_field() -> FieldSampler:
    return FieldSampler(
        E=lambda t, x: np.zeros_like(np.atleast_2d(x), dtype=float),
        gradE=lambda t, x: np.zeros((len(np.atleast_2d(x)), 3, 3)),
        provenance="zero")


def constant_field(E0) -> FieldSampler:
    E0 = np.asarray(E0, dtype=float)
    return FieldSampler(
        E=lambda t, x: np.broadcast_to(E0, np.atleast_2d(x).shape).copy(),
        gradE=lambda t, x: np.zeros((len(np.atleast_2d(x)), 3, 3)),
        provenance="synthetic")


def _softplus(z, kappa=1.0):
    # smooth surrogate of [z]_+; complex-step safe
    return 0.5 * (z + np.sqrt(z * z + kappa * kappa))


def synthetic_field(V0: float, delta: float = 0.01) -> FieldSampler:
    """Smooth field with the a-priori decay delta/(1 + taucheck^3 + dcheck^3 + |xperp|^3).

    Built for a straight charge line X1(t) = V0 t so the passage time is
    x1/V0 in closed form. gradE is computed by complex-step differentiation,
    exact to machine precision.
    """

    def E(t, x):
        x = np.atleast_2d(x)
        z = x[..., 0] - V0 * t
        dch = _softplus(z)
        tch = _softplus(-z / V0)
        b2 = 1.0 + x[..., 1] ** 2 + x[..., 2] ** 2
        w = delta / (1.0 + tch**3 + dch**3 + b2**1.5)
        out = np.empty(x.shape, dtype=x.dtype)
        out[..., 0] = w
        out[..., 1] = 0.4 * w * np.sin(0.3 * x[..., 1] + 0.2 * x[..., 2])
        out[..., 2] = 0.3 * w * np.cos(0.4 * x[..., 2] - 0.1 * x[..., 0])
        return out

    def gradE(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((len(x), 3, 3))
        h = 1e-20
        for j in range(3):
            xc = x.astype(complex)
            xc[:, j] += 1j * h
            out[:, :, j] = E(t, xc).imag / h
        return out

    return FieldSampler(E=E, gradE=gradE, provenance="synthetic")


# ---------------------------------------------------------------------------
# charge trajectory
# ---------------------------------------------------------------------------

@dataclass
class ChargeTrajectory:
    """Charge path on [0, T] with the linear extension outside, plus its potential."""
    T: float
    profile: Profile | None = None
    t_grid: np.ndarray | None = None
    X_grid: np.ndarray | None = None     # (n, 3)
    V_grid: np.ndarray | None = None     # (n, 3)
    V0: float = 0.0                      # straight-line speed when no grid given
    _spl: object = dc_field(default=None, repr=False)

    @classmethod
    def straight(cls, V0: float, T: float, profile: Profile | None = None):
        return cls(T=T, profile=profile, V0=V0)

    def _spline(self):
        if self._spl is None:
            self._spl = CubicHermiteSpline(self.t_grid, self.X_grid, self.V_grid, axis=0)
        return self._spl

    def X_of(self, t):
        t = np.asarray(t, dtype=float)
        if self.t_grid is None:
            out = np.zeros(t.shape + (3,))
            out[..., 0] = self.V0 * t
            return out
        tc = np.clip(t, 0.0, self.T)
        out = self._spline()(tc)
        lo = t < 0.0
        hi = t > self.T
        if np.any(lo):
            out[lo] = np.multiply.outer(t[lo], self.V_grid[0])
        if np.any(hi):
            out[hi] = self.X_grid[-1] + np.multiply.outer(t[hi] - self.T, self.V_grid[-1])
        return out

    def V_of(self, t):
        t = np.asarray(t, dtype=float)
        if self.t_grid is None:
            out = np.zeros(t.shape + (3,))
            out[..., 0] = self.V0
            return out
        tc = np.clip(t, 0.0, self.T)
        return self._spline().derivative()(tc)

    def X1(self, t):
        return self.X_of(t)[..., 0]

    def V1(self, t):
        return self.V_of(t)[..., 0]

    @property
    def v_min(self) -> float:
        if self.t_grid is None:
            return self.V0
        return float(np.min(self.V_grid[:, 0]))


def _total_field(field: FieldSampler, traj: ChargeTrajectory | None):
    """Ebar(s, x) = E(s, x) + e0 grad Phi(x - X(s))."""
    if traj is None or traj.profile is None or traj.profile.Phi_amplitude == 0.0:
        return field.E

    prof = traj.profile

    def ebar(s, x):
        x = np.atleast_2d(x)
        return field.E(s, x) + prof.e0 * Phi_grad(prof, x - traj.X_of(s))

    return ebar


# ---------------------------------------------------------------------------
# backward characteristics
# ---------------------------------------------------------------------------

@dataclass
class CharResult:
    X_st: np.ndarray
    V_st: np.ndarray
    Ytilde: np.ndarray
    Wtilde: np.ndarray
    anchor: np.ndarray | None = None     # collision anchor x - Tcheck v, when defined
    error_estimate: float = 0.0


def _rk4_sweep(ebar, t: float, s_targets: np.ndarray, X0: np.ndarray, V0: np.ndarray,
               h: float):
    """Backward RK4 from t through descending s_targets; returns states there.

    X0, V0 have shape (N, 3); output arrays are (len(s_targets), N, 3).
    """
    X = X0.astype(float).copy()
    V = V0.astype(float).copy()
    outX = np.empty((len(s_targets), *X.shape))
    outV = np.empty_like(outX)
    s_now = t
    for i, s_tgt in enumerate(s_targets):
        span = s_now - s_tgt
        if span > 1e-14:
            n = max(1, int(math.ceil(span / h - 1e-12)))
            hh = -span / n
            for _ in range(n):
                k1x = V
                k1v = ebar(s_now, X)
                k2x = V + 0.5 * hh * k1v
                k2v = ebar(s_now + 0.5 * hh, X + 0.5 * hh * k1x)
                k3x = V + 0.5 * hh * k2v
                k3v = ebar(s_now + 0.5 * hh, X + 0.5 * hh * k2x)
                k4x = V + hh * k3v
                k4v = ebar(s_now + hh, X + hh * k3x)
                X = X + hh / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
                V = V + hh / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
                s_now += hh
            s_now = s_tgt
        outX[i] = X
        outV[i] = V
    return outX, outV


def integrate_characteristics(field: FieldSampler, charge_traj: ChargeTrajectory | None,
                              s: float, t: float, x, v, h: float = 0.02,
                              richardson: bool = True) -> CharResult:
    """Backward characteristics with terminal (x, v) at time t, evaluated at s."""
    if not 0.0 <= s <= t:
        raise ValueError("requires 0 <= s <= t")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    single = x.ndim == 1
    X0 = np.atleast_2d(x)
    V0 = np.atleast_2d(v)
    ebar = _total_field(field, charge_traj)
    tgts = np.array([s])
    X1s, V1s = _rk4_sweep(ebar, t, tgts, X0, V0, h)
    err = 0.0
    if richardson:
        X2s, V2s = _rk4_sweep(ebar, t, tgts, X0, V0, h / 2.0)
        err = float(np.max(np.abs(X2s - X1s)) + np.max(np.abs(V2s - V1s))) / 15.0
        X1s, V1s = X2s, V2s
    Xs, Vs = X1s[0], V1s[0]
    free = X0 - (t - s) * V0
    anchor = None
    if charge_traj is not None:
        vmin = charge_traj.v_min
        if vmin > 0 and np.all(np.linalg.norm(V0, axis=1) <= 0.5 * vmin):
            Tcoll = _collision_time(charge_traj, t, X0[:, 0], V0[:, 0])
            anchor = X0 - np.maximum(t - Tcoll, 0.0)[:, None] * V0
            if single:
                anchor = anchor[0]
    res = CharResult(
        X_st=Xs[0] if single else Xs,
        V_st=Vs[0] if single else Vs,
        Ytilde=(Xs - free)[0] if single else Xs - free,
        Wtilde=(Vs - V0)[0] if single else Vs - V0,
        anchor=anchor,
        error_estimate=err)
    return res


# ---------------------------------------------------------------------------
# passage / collision geometry
# ---------------------------------------------------------------------------

@dataclass
class GeometrySample:
    tau_x: float
    tau_check: float
    d_check: float
    T_coll: float | None
    T_check: float | None
    x_impact: np.ndarray | None
    v_star_perp: np.ndarray | None
    region: str


def _solve_monotone(f, fprime, lo, hi, n_bisect: int = 60):
    """Vectorized bisection + Newton polish for increasing f; roots of f = 0."""
    lo = lo.astype(float).copy()
    hi = hi.astype(float).copy()
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        neg = f(mid) < 0.0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    root = 0.5 * (lo + hi)
    for _ in range(3):
        fp = fprime(root)
        step = np.where(fp > 0, f(root) / np.where(fp > 0, fp, 1.0), 0.0)
        root = root - step
    return root


def _bracket(f, t_ref: np.ndarray):
    lo = t_ref - 1.0
    hi = t_ref + 1.0
    width = np.ones_like(t_ref)
    for _ in range(80):
        need_lo = f(lo) > 0.0
        need_hi = f(hi) < 0.0
        if not (np.any(need_lo) or np.any(need_hi)):
            break
        width *= 2.0
        lo = np.where(need_lo, lo - width, lo)
        hi = np.where(need_hi, hi + width, hi)
    return lo, hi


def _passage_time(traj: ChargeTrajectory, x1: np.ndarray) -> np.ndarray:
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    f = lambda tau: traj.X1(tau) - x1
    fp = lambda tau: traj.V1(tau)
    lo, hi = _bracket(f, x1 / max(traj.v_min, 1e-12))
    return _solve_monotone(f, fp, lo, hi)


def _collision_time(traj: ChargeTrajectory, t: float, x1, v1) -> np.ndarray:
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    v1 = np.atleast_1d(np.asarray(v1, dtype=float))
    f = lambda tau: traj.X1(tau) - x1 + (t - tau) * v1
    fp = lambda tau: traj.V1(tau) - v1
    lo, hi = _bracket(f, np.full_like(x1, t))
    return _solve_monotone(f, fp, lo, hi)


def geometry(charge_traj: ChargeTrajectory, T: float, t: float, x, v,
             s: float = 0.0, beta: float = 0.1, delta: float = 0.05,
             strict: bool = True) -> GeometrySample:
    """Passage/collision quantities and straightening-region tag for one (t, x, v).

    Collision quantities are defined only for |v| <= v_min/2; with strict=True
    larger v raises, otherwise they are omitted and the region is unclassified
    (unless the point is ahead of the charge).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    vmin = charge_traj.v_min
    if vmin <= 0:
        raise ValueError("geometry requires V1 > 0 along the trajectory")
    tau = float(_passage_time(charge_traj, np.array([x[0]]))[0])
    tau_check = max(t - tau, 0.0)
    d_check = max(x[0] - float(charge_traj.X1(np.array([t]))[0]), 0.0)

    speed = float(np.linalg.norm(v))
    if speed > 0.5 * vmin:
        if strict:
            raise ValueError(
                f"collision quantities require |v| <= v_min/2 = {0.5*vmin:g}; got {speed:g}")
        region = "front" if d_check > 0 else "unclassified"
        return GeometrySample(tau_x=tau, tau_check=tau_check, d_check=d_check,
                              T_coll=None, T_check=None, x_impact=None,
                              v_star_perp=None, region=region)

    Tc = float(_collision_time(charge_traj, t, np.array([x[0]]), np.array([v[0]]))[0])
    T_check = max(t - Tc, 0.0)
    x_impact = x - T_check * v
    v_star = x[1:] / T_check if T_check > 0 else None

    xp = math.hypot(x[1], x[2])
    vp = math.hypot(v[1], v[2])
    jb = lambda a: math.sqrt(1.0 + a * a)
    if d_check > 0:
        region = "front"
    elif s > Tc - 5.0:
        region = "post_collision"
    elif speed < delta ** (-beta) and tau_check * jb(vp) < jb(xp) / 4.0:
        region = "K"
    elif (speed < delta ** (-beta) and v_star is not None
          and np.linalg.norm(v_star - v[1:]) * tau_check > math.sqrt(max(Tc - s, 0.0))):
        region = "F"
    else:
        region = "unclassified"
    return GeometrySample(tau_x=tau, tau_check=tau_check, d_check=d_check,
                          T_coll=Tc, T_check=T_check, x_impact=x_impact,
                          v_star_perp=v_star, region=region)


# ---------------------------------------------------------------------------
# straightening map
# ---------------------------------------------------------------------------

def straighten(field: FieldSampler, charge_traj: ChargeTrajectory | None,
               s: float, t: float, x, v_target, omega_radius: float | None = None,
               max_iter: int = 20, fp_tol: float = 1e-9, h: float = 0.02) -> tuple:
    """Fixed-point inversion v -> v_target + Ytilde_{s,t}(x, v)/(t-s).

    Returns (psi, report). The contraction is probed numerically: the map
    derivative |grad_v Ytilde|/(t-s) is estimated by finite differences at
    v_target (and at the omega_radius shell when given); a failed probe is
    reported, not raised.
    """
    x = np.asarray(x, dtype=float)
    vt = np.asarray(v_target, dtype=float)
    dt_span = t - s
    if dt_span <= 0:
        raise ValueError("straighten requires s < t")
    ebar = _total_field(field, charge_traj)

    def ytilde(vs):
        vs2 = np.atleast_2d(vs)
        X0 = np.broadcast_to(x, vs2.shape).copy()
        Xs, _ = _rk4_sweep(ebar, t, np.array([s]), X0, vs2, h)
        return Xs[0] - (X0 - dt_span * vs2)

    # contraction probe by centered differences
    probe_pts = [vt]
    if omega_radius:
        for d in np.eye(3):
            probe_pts.append(vt + omega_radius * d)
    fd = 1e-4
    stencil = []
    for p in probe_pts:
        for j in range(3):
            e = np.zeros(3)
            e[j] = fd
            stencil.extend([p + e, p - e])
    ys = ytilde(np.array(stencil))
    contraction = 0.0
    for i in range(len(probe_pts)):
        Jt = np.empty((3, 3))
        for j in range(3):
            Jt[:, j] = (ys[6 * i + 2 * j] - ys[6 * i + 2 * j + 1]) / (2 * fd)
        contraction = max(contraction, float(np.linalg.norm(Jt, 2)) / dt_span)
    report = {"contraction_estimate": contraction, "contraction_ok": contraction <= 0.5,
              "converged": False, "iterations": 0, "identity_residual": math.inf,
              "psi_bound_ok": False}
    if not report["contraction_ok"]:
        return vt.copy(), report

    y_at_vt = ytilde(vt)[0]
    psi = vt + y_at_vt / dt_span
    for it in range(1, max_iter + 1):
        y = ytilde(psi)[0]
        nxt = vt + y / dt_span
        step = float(np.linalg.norm(nxt - psi))
        psi = nxt
        if step < fp_tol:
            report["converged"] = True
            report["iterations"] = it
            break
    else:
        report["iterations"] = max_iter
    Xs, _ = _rk4_sweep(ebar, t, np.array([s]), np.atleast_2d(x).copy(),
                       np.atleast_2d(psi), h)
    resid = float(np.linalg.norm(Xs[0][0] - (x - dt_span * vt)))
    report["identity_residual"] = resid
    report["psi_bound_ok"] = bool(
        np.linalg.norm(psi - vt) <= 2.0 * np.linalg.norm(y_at_vt) / dt_span + 1e-12)
    return psi, report


def straighten_batch(field: FieldSampler, charge_traj: ChargeTrajectory | None,
                     s: float, t: float, X: np.ndarray, V_target: np.ndarray,
                     max_iter: int = 20, fp_tol: float = 1e-9, h: float = 0.02):
    """Vectorized straighten over samples sharing one (s, t) pair.

    Returns (psi (N,3), report dict of arrays: contraction_ok, converged,
    iterations, identity_residual, psi_bound_ok).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Vt = np.atleast_2d(np.asarray(V_target, dtype=float))
    n = len(X)
    dt_span = t - s
    ebar = _total_field(field, charge_traj)

    def ytilde(vs):
        Xs, _ = _rk4_sweep(ebar, t, np.array([s]), X.copy(), vs, h)
        return Xs[0] - (X - dt_span * vs)

    fd = 1e-4
    stencil = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = fd
        stencil.extend([Vt + e, Vt - e])
    ys = [ytilde(p) for p in stencil]
    J = np.empty((n, 3, 3))
    for j in range(3):
        J[:, :, j] = (ys[2 * j] - ys[2 * j + 1]) / (2 * fd)
    contraction = np.linalg.norm(J, ord=2, axis=(1, 2)) / dt_span
    ok = contraction <= 0.5

    y0 = ytilde(Vt)
    psi = Vt + y0 / dt_span
    iterations = np.zeros(n, dtype=int)
    converged = np.zeros(n, dtype=bool)
    for it in range(1, max_iter + 1):
        nxt = Vt + ytilde(psi) / dt_span
        step = np.linalg.norm(nxt - psi, axis=1)
        psi = nxt
        newly = (~converged) & (step < fp_tol)
        iterations[newly] = it
        converged |= newly
        if np.all(converged | ~ok):
            break
    Xs, _ = _rk4_sweep(ebar, t, np.array([s]), X.copy(), psi, h)
    resid = np.linalg.norm(Xs[0] - (X - dt_span * Vt), axis=1)
    bound_ok = (np.linalg.norm(psi - Vt, axis=1)
                <= 2.0 * np.linalg.norm(y0, axis=1) / dt_span + 1e-12)
    return psi, {"contraction_ok": ok, "contraction_estimate": contraction,
                 "converged": converged, "iterations": iterations,
                 "identity_residual": resid, "psi_bound_ok": bound_ok}


# ---------------------------------------------------------------------------
# velocity quadrature
# ---------------------------------------------------------------------------

def sphere_design_26():
    """26-point octahedral quadrature on S^2, exact to degree 7 (weights sum 1)."""
    pts, wts = [], []
    for i in range(3):
        for sgn in (1.0, -1.0):
            p = np.zeros(3)
            p[i] = sgn
            pts.append(p)
            wts.append(1.0 / 21.0)
    s = 1.0 / math.sqrt(2.0)
    for i in range(3):
        j = (i + 1) % 3
        for si in (s, -s):
            for sj in (s, -s):
                p = np.zeros(3)
                p[i], p[j] = si, sj
                pts.append(p)
                wts.append(4.0 / 105.0)
    c = 1.0 / math.sqrt(3.0)
    for sx in (c, -c):
        for sy in (c, -c):
            for sz in (c, -c):
                pts.append(np.array([sx, sy, sz]))
                wts.append(9.0 / 280.0)
    return np.array(pts), np.array(wts)


def sphere_product_rule(n_theta: int, n_phi: int):
    """Gauss(cos theta) x uniform(phi) quadrature on S^2 (weights sum 1)."""
    ct, wt = leggauss(n_theta)
    st = np.sqrt(1.0 - ct**2)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    dirs = np.stack([
        np.repeat(ct, n_phi),
        np.outer(st, np.cos(phi)).ravel(),
        np.outer(st, np.sin(phi)).ravel()], axis=1)
    w = np.repeat(wt, n_phi) / (2.0 * n_phi)
    return dirs, w


def _velocity_nodes(profile: Profile, n_radial: int = 16, margin: float = 0.5,
                    sphere=None):
    """Product nodes for int f(v) d^3 v over the (slightly enlarged) mu support.

    sphere: None for the default 26-point design, or (n_theta, n_phi) for a
    denser product rule (oscillatory integrands).
    """
    vmax = profile.velocity_cutoff + margin
    gx, gw = leggauss(n_radial)
    r = 0.5 * vmax * (gx + 1.0)
    wr = 0.5 * vmax * gw
    dirs, wa = sphere_design_26() if sphere is None else sphere_product_rule(*sphere)
    V = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
    W = 4.0 * math.pi * (wr[:, None] * r[:, None] ** 2 * wa[None, :]).ravel()
    return V, W


# ---------------------------------------------------------------------------
# source terms
# ---------------------------------------------------------------------------

def _sweep_grid(t: float, traj: ChargeTrajectory | None, h_cap: float = 0.05) -> np.ndarray:
    """Uniform backward s-grid fine enough for the charge's collision timescale."""
    vmin = traj.v_min if traj is not None and traj.v_min > 0 else 0.0
    h = min(h_cap, 0.2 / vmin) if vmin > 1.0 else h_cap
    n = max(2, int(math.ceil(t / h)))
    return np.linspace(t, 0.0, n + 1)


def reaction_term(field: FieldSampler, charge_traj: ChargeTrajectory | None,
                  t: float, x, n_radial: int = 16, grad_step: float = 1e-2,
                  with_gradient: bool = True, profile: Profile | None = None,
                  sphere=None, h_cap: float = 0.05):
    """R(t, x): linear-minus-nonlinear reaction integral and an FD gradient.

    R = int_0^t int [E(s, x-(t-s)v) . grad mu(v) - E(s, X_{s,t}) . grad mu(V_{s,t})] dv ds.
    The s-integral is a trapezoid on the backward sweep grid; the v-integral
    uses the 26-point spherical design times radial Gauss nodes.
    """
    prof = profile or (charge_traj.profile if charge_traj is not None else None)
    if prof is None:
        raise ValueError("reaction_term needs a profile (argument or on charge_traj)")
    x = np.asarray(x, dtype=float)
    pts = [x]
    if with_gradient:
        for j in range(3):
            e = np.zeros(3)
            e[j] = grad_step
            pts.extend([x + e, x - e])
    vals = [_reaction_value(field, charge_traj, t, p, prof, n_radial, sphere, h_cap)
            for p in pts]
    if not with_gradient:
        return vals[0], None
    grad = np.array([(vals[1 + 2 * j] - vals[2 + 2 * j]) / (2 * grad_step) for j in range(3)])
    return vals[0], grad


def _reaction_value(field, charge_traj, t, x, prof, n_radial, sphere=None,
                    h_cap: float = 0.05):
    Vn, Wn = _velocity_nodes(prof, n_radial, sphere=sphere)
    ebar = _total_field(field, charge_traj)
    s_grid = _sweep_grid(t, charge_traj, h_cap=h_cap)
    X0 = np.broadcast_to(x, Vn.shape).copy()
    Xs, Vs = _rk4_sweep(ebar, t, s_grid[1:], X0, Vn, h=s_grid[0] - s_grid[1])
    gmu = mu_grad(prof, Vn)
    integrand = np.empty(len(s_grid))
    integrand[0] = 0.0   # s = t: both terms coincide
    for i, s in enumerate(s_grid[1:]):
        lin = np.einsum("nj,nj->n", field.E(s, x[None, :] - (t - s) * Vn), gmu)
        non = np.einsum("nj,nj->n", field.E(s, Xs[i]), mu_grad(prof, Vs[i]))
        integrand[i + 1] = float(np.dot(Wn, lin - non))
    ds = s_grid[0] - s_grid[1]
    w = np.full(len(s_grid), ds)
    w[0] = w[-1] = ds / 2.0
    return float(np.dot(w, integrand))


def charge_source(field: FieldSampler, charge_traj: ChargeTrajectory, t: float, x,
                  n_radial: int = 16) -> float:
    """S_I(t, x) = -e0 int_0^t int grad Phi(X_{s,t} - X(s)) . grad mu(V_{s,t}) dv ds."""
    prof = charge_traj.profile
    if prof is None:
        raise ValueError("charge_source needs a profile on the trajectory")
    x = np.asarray(x, dtype=float)
    Vn, Wn = _velocity_nodes(prof, n_radial)
    ebar = _total_field(field, charge_traj)
    s_grid = _sweep_grid(t, charge_traj)
    X0 = np.broadcast_to(x, Vn.shape).copy()
    Xs, Vs = _rk4_sweep(ebar, t, s_grid[1:], X0, Vn, h=s_grid[0] - s_grid[1])
    integrand = np.empty(len(s_grid))
    Xc = charge_traj.X_of(s_grid)
    gp0 = Phi_grad(prof, x[None, :] - Xc[0])
    integrand[0] = float(np.dot(Wn, np.einsum("nj,nj->n", np.broadcast_to(gp0, Vn.shape),
                                              mu_grad(prof, Vn))))
    for i, s in enumerate(s_grid[1:]):
        gp = Phi_grad(prof, Xs[i] - Xc[i + 1])
        integrand[i + 1] = float(np.dot(Wn, np.einsum("nj,nj->n", gp, mu_grad(prof, Vs[i]))))
    ds = s_grid[0] - s_grid[1]
    w = np.full(len(s_grid), ds)
    w[0] = w[-1] = ds / 2.0
    return -prof.e0 * float(np.dot(w, integrand))


def charge_source_linearized(profile: Profile, charge_traj: ChargeTrajectory,
                             t: float, x, n_radial: int = 16, n_s: int = 512,
                             tail_eps: float = 1e-12) -> float:
    """S_bar(t, x): straight-line characteristics, frozen charge state, s from -inf.

    The s-integral is truncated where the Phi factor is below tail_eps of its
    peak; relative velocity >= v_min/2 makes the window O(1/v_min) long.
    """
    x = np.asarray(x, dtype=float)
    Xt = charge_traj.X_of(np.array([t]))[0]
    Vt = charge_traj.V_of(np.array([t]))[0]
    Vn, Wn = _velocity_nodes(profile, n_radial)
    gmu = mu_grad(profile, Vn)
    # |arg| >= (t-s) (v_min - |v|) - |x - Xt|; solve for the reach of Phi
    reach = profile.Phi_width * math.sqrt(2.0 * math.log(1.0 / tail_eps))
    rel = max(charge_traj.v_min - profile.velocity_cutoff - 0.5, 0.5)
    span = (reach + float(np.linalg.norm(x - Xt))) / rel + 1.0
    gx, gw = leggauss(n_s)
    s_nodes = t - 0.5 * span * (gx + 1.0)
    w_nodes = 0.5 * span * gw
    total = 0.0
    for s, w in zip(s_nodes, w_nodes):
        arg = x[None, :] - (t - s) * (Vn - Vt[None, :]) - Xt[None, :]
        gp = Phi_grad(profile, arg)
        total += w * float(np.dot(Wn, np.einsum("nj,nj->n", gp, gmu)))
    return -profile.e0 * total


# ---------------------------------------------------------------------------
# weighted norm
# ---------------------------------------------------------------------------

def yt_norm(samples, charge_traj: ChargeTrajectory, T: float) -> float:
    """sup over samples of |val| <tau^2+d^2+xp^2> + |grad| <tau^3+d^3+xp^3>.

    `samples` is an iterable of (t, x, val, grad) with grad a 3-vector or None;
    <a> = sqrt(1 + a^2).
    """
    best = 0.0
    for (t, x, val, grad) in samples:
        x = np.asarray(x, dtype=float)
        tau = float(_passage_time(charge_traj, np.array([x[0]]))[0])
        tch = max(t - tau, 0.0)
        dch = max(x[0] - float(charge_traj.X1(np.array([t]))[0]), 0.0)
        xp = math.hypot(x[1], x[2])
        a2 = tch**2 + dch**2 + xp**2
        a3 = tch**3 + dch**3 + xp**3
        term = abs(float(val)) * math.sqrt(1.0 + a2 * a2)
        if grad is not None:
            term += float(np.linalg.norm(grad)) * math.sqrt(1.0 + a3 * a3)
        best = max(best, term)
    return best


# ---------------------------------------------------------------------------
# linear-response sampler (from per-mode tables)
# ---------------------------------------------------------------------------

def linear_response_field(profile: Profile, R: float, Vstar: float,
                          n_k: int = 24, n_u: int = 48, n_t: int = 9) -> FieldSampler:
    """E(t, x) assembled from the per-mode linearized response.

    Coordinates put the charge on X1(t) = Vstar * t. Modes rhohat(t, k, u)
    are evaluated through the Green's representation on a (k, u) product grid
    and interpolated linearly in t; the axisymmetric inverse transform uses
    Bessel factors J0/J1 with phases in the charge-relative coordinate
    x1 - Vstar t, where the co-moving mode amplitudes vary slowly. Intended
    for pointwise probes, not for bulk characteristic sweeps (n_u must grow
    like k_max |x1 - Vstar t| for far probes).
    """
    from .response import _rhohat_ladder  # local import; response is mode-level only

    gk, gwk = leggauss(n_k)
    k_max = math.sqrt(72.0) / profile.Phi_width
    k = 0.5 * k_max * (gk + 1.0)
    wk = 0.5 * k_max * gwk
    gu, gwu = leggauss(n_u)
    u = gu.copy()
    wu = gwu.copy()
    t_nodes = np.linspace(R / n_t, R, n_t)
    W = np.empty((n_t, n_k, n_u), dtype=complex)
    for ik, kk in enumerate(k):
        dt = min(0.05, 0.2 / (kk * Vstar), 0.0125 / max(kk, 0.4))
        dt = R / math.ceil(R / dt)
        y = -u * Vstar            # om = xi.V* = k u V = -k y
        W[:, ik, :] = _rhohat_ladder(profile, Vstar, kk, y, t_nodes, dt)
    # co-moving amplitudes: rhohat(t, xi) = e^{i om (R - t)} rho_tilde(t, xi)
    rho_tilde = -profile.e0 * Phi_hat(profile, k)[None, :, None] * W

    q = np.sqrt(np.maximum(1.0 - u**2, 0.0))
    base = (wk[:, None] * wu[None, :] * k[:, None] ** 2
            * phi_hat(k)[:, None]) / (2.0 * math.pi) ** 2

    def _modes_at(t):
        tt = float(np.clip(t, t_nodes[0], t_nodes[-1]))
        i = min(int(np.searchsorted(t_nodes, tt, side="right")) - 1, n_t - 2)
        i = max(i, 0)
        lam = (tt - t_nodes[i]) / (t_nodes[i + 1] - t_nodes[i])
        return (1.0 - lam) * rho_tilde[i] + lam * rho_tilde[i + 1]

    def E(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rh = _modes_at(t)
        out = np.empty((len(x), 3))
        for i, xi in enumerate(x):
            x1_rel = xi[0] - Vstar * t
            xp = math.hypot(xi[1], xi[2])
            phase = np.exp(1j * np.outer(k, u) * x1_rel)
            b0 = j0(np.outer(k, q) * xp)
            b1 = j1(np.outer(k, q) * xp)
            common = base * rh * phase
            e1 = np.sum(common * (-1j) * k[:, None] * u[None, :] * b0).real
            ep = np.sum(common * k[:, None] * q[None, :] * b1).real
            out[i, 0] = e1
            if xp > 1e-12:
                out[i, 1] = ep * xi[1] / xp
                out[i, 2] = ep * xi[2] / xp
            else:
                out[i, 1] = out[i, 2] = 0.0
        return out

    def gradE(t, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((len(x), 3, 3))
        h = 1e-4
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            out[:, :, j] = (E(t, x + e) - E(t, x - e)) / (2 * h)
        return out

    return FieldSampler(E=E, gradE=gradE, provenance="linear_response")

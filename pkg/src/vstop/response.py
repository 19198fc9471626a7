"""Linearized density response to a moving charge and the stopping force.

Per spatial mode xi the density obeys the scalar Volterra equation

    rhohat(t, xi) = Shat(t, xi) + int_0^t K(t-s, xi) rhohat(s, xi) ds,

with the same kernel K as the Green's-function module and the moving-charge
source (charge at X* - (R-s) V*, arriving at X* at t = R)

    Shat(t, xi) = -e0 Phihat(k) e^{-i xi.X*} e^{i om (R-t)} M(t; om, k),
    M(t) = int_0^t e^{i om tau} m(tau, k) dtau,   om = xi . V*,
    m(tau, k) = i xi . FT[grad mu](tau xi) = -k^2 tau mu_hat(tau k).

The force on the charge is F = e0 (grad phi * rho)(X*), so that the charge
ODE reads Vdot = alpha F; its component along V* is negative (drag).

Two routes to the long-time force:
  * time domain: rhohat(R, xi) = Shat + Ghat (*) Shat with the time-marched
    resolvent Ghat, integrated over modes at t = R, with a plateau detector
    in R;
  * steady state: the t -> infinity Laplace limit of the per-mode equation in
    the charge frame gives rhohat_inf = -e0 Phihat(k) Psi_k(w - i0) at the
    resonant boundary point w = -xi.V*/|xi|, with Psi_k = a/(1 - phihat a).

Both reduce, by axial symmetry about V*, to 2D quadratures over (k, u) with
u the cosine of the angle between xi and V*; the substitution y = -u|V*|
concentrates the nodes on the resonant band |y| <= velocity support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .dispersion import DEFAULT_KAPPA_MIN, UnstableProfileError, a_boundary
from .greens import ContractionError, ghat_resolvent, volterra_kernel
from .profiles import Phi_hat, Profile, kernel_cutoff, mu_hat_line, phi_hat, pmu_peak

__all__ = [
    "ModeSeries",
    "StoppingResult",
    "source_hat",
    "solve_rho",
    "force_timedomain",
    "force_steadystate",
    "stopping_coefficient",
    "PlateauError",
]


class PlateauError(RuntimeError):
    """Force failed to plateau by R_max."""


@dataclass
class ModeSeries:
    xi: np.ndarray
    t_grid: np.ndarray
    shat: np.ndarray
    rhohat: np.ndarray


@dataclass
class StoppingResult:
    Vstar: np.ndarray
    force: np.ndarray
    A_est: float
    route: str
    plateau: bool = True
    R_used: float = math.inf


def _m_osc(profile: Profile, tau, k: float):
    """m(tau, k) = -k^2 tau mu_hat(tau k); the source/kernel time density."""
    tau = np.asarray(tau, dtype=float)
    return -(k**2) * tau * mu_hat_line(profile, tau * k)


# ---------------------------------------------------------------------------
# source transform
# ---------------------------------------------------------------------------

def source_hat(profile: Profile, R: float, Vstar, t: float, xi,
               Xstar=(0.0, 0.0, 0.0)) -> complex:
    """Spatial transform of the moving-charge source at time t (0 <= t <= R)."""
    if not 0.0 <= t <= R:
        raise ValueError("source_hat requires 0 <= t <= R")
    xi = np.asarray(xi, dtype=float)
    V = np.asarray(Vstar, dtype=float)
    X = np.asarray(Xstar, dtype=float)
    k = float(np.linalg.norm(xi))
    if k == 0.0 or t == 0.0:
        return 0.0 + 0.0j
    om = float(xi @ V)
    M = _m_cumulative_end(profile, om, k, t)
    phase = np.exp(-1j * float(xi @ X) + 1j * om * (R - t))
    return complex(-profile.e0 * Phi_hat(profile, k) * phase * M)


def _m_cumulative_end(profile: Profile, om: float, k: float, t: float) -> complex:
    """M(t; om, k) by panelized Gauss-Legendre, panels resolving e^{i om tau}."""
    tau_max = min(t, kernel_cutoff(profile) / k)
    if tau_max <= 0:
        return 0.0 + 0.0j
    width = min(0.5 / max(k, 1.0), math.pi / (4.0 * abs(om) + 1.0))
    n_pan = max(4, int(math.ceil(tau_max / width)))
    edges = np.linspace(0.0, tau_max, n_pan + 1)
    gx, gw = leggauss(8)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    tau = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
    w = (half[:, None] * gw[None, :]).ravel()
    return complex(np.sum(w * np.exp(1j * om * tau) * _m_osc(profile, tau, k)))


# ---------------------------------------------------------------------------
# per-mode Volterra solve
# ---------------------------------------------------------------------------

def solve_rho(profile: Profile, source, xi, t_grid) -> ModeSeries:
    """March rhohat = Shat + K * rhohat by trapezoidal product integration.

    `source` is a callable t -> complex or an array on t_grid.
    """
    xi = np.asarray(xi, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-10, atol=1e-12):
        raise ValueError("t_grid must be uniform")
    S = np.asarray([source(tt) for tt in t], dtype=complex) if callable(source) \
        else np.asarray(source, dtype=complex)
    k = float(np.linalg.norm(xi))
    K = volterra_kernel(profile, t, k)
    if phi_hat(k) * k * pmu_peak(profile) * dt >= 0.5:
        raise ContractionError(f"|K| dt >= 1/2 at |xi| = {k:g}; reduce dt")
    n = len(t)
    lag = n if k == 0 else min(n, int(kernel_cutoff(profile) / (k * dt)) + 2)
    rho = np.zeros(n, dtype=complex)
    rho[0] = S[0]
    for i in range(1, n):
        j0 = max(0, i - lag)
        acc = np.dot(K[i - j0:0:-1], rho[j0:i])
        if j0 == 0:
            acc -= 0.5 * K[i] * rho[0]   # trapezoid half weight at s = 0
        rho[i] = S[i] + dt * acc
    return ModeSeries(xi=xi, t_grid=t, shat=S, rhohat=rho)


# ---------------------------------------------------------------------------
# quadrature grids shared by the force routes
# ---------------------------------------------------------------------------

def _force_grids(profile: Profile, V: float, n_k: int = 32, n_y: int = 64):
    """Radial k nodes against Phihat's decay; y nodes on the resonant band."""
    w = profile.Phi_width
    k_max = math.sqrt(2.0 * 36.0) / w   # Phihat below e^-36 of its peak
    gx, gw = leggauss(n_k)
    k = 0.5 * k_max * (gx + 1.0)
    wk = 0.5 * k_max * gw
    y_lim = min(V, profile.velocity_cutoff)
    gy, gwy = leggauss(n_y)
    y = y_lim * gy
    wy = y_lim * gwy
    return k, wk, y, wy


def _assemble_force(V: float, Vhat: np.ndarray, k, wk, y, wy, im_w: np.ndarray,
                    e0_sq: float = 1.0) -> np.ndarray:
    """F = -(2 pi)^-2 V^-2 * int k^3 phihat Phihat ... already folded in im_w.

    im_w[ik, iy] must be Im W where rhohat = -e0 Phihat W; the force is then
    F_par = -(2 pi)^-2 V^-2 sum_k wk k^3 phihat Phihat sum_y wy y Im W.
    """
    inner = im_w @ (wy * y)
    f_par = -(e0_sq / (2.0 * math.pi) ** 2 / V**2) * float(np.sum(wk * inner))
    return f_par * Vhat


# ---------------------------------------------------------------------------
# steady-state route
# ---------------------------------------------------------------------------

def force_steadystate(profile: Profile, Vstar, n_k: int = 32, n_y: int = 64,
                      kappa_min: float = DEFAULT_KAPPA_MIN) -> StoppingResult:
    """Long-time force from the resonant boundary values of the dispersion function."""
    V3 = np.asarray(Vstar, dtype=float)
    V = float(np.linalg.norm(V3))
    if V <= profile.support_speed:
        raise ValueError(
            f"|V*| = {V:g} must exceed the profile support speed {profile.support_speed:g}")
    Vhat = V3 / V
    k, wk, y, wy = _force_grids(profile, V, n_k, n_y)
    gam = a_boundary(profile, y)                       # k-independent
    phis = phi_hat(k)
    denom = 1.0 - np.outer(phis, gam)
    dmin = float(np.min(np.abs(denom)))
    if dmin < kappa_min:
        raise UnstableProfileError(
            f"|1 - phihat a| = {dmin:.3g} < kappa_min at a force quadrature node")
    im_psi = np.imag(gam)[None, :] / np.abs(denom) ** 2
    weights = (k**3 * phis * Phi_hat(profile, k))[:, None]
    force = _assemble_force(V, Vhat, k, wk, y, wy, weights * im_psi)
    f_par = float(force @ Vhat)
    return StoppingResult(Vstar=V3, force=force, A_est=-(V**2) * f_par,
                          route="steadystate")


# ---------------------------------------------------------------------------
# time-domain route
# ---------------------------------------------------------------------------

def _ghat_fine(profile: Profile, k: float, dt: float, n: int) -> np.ndarray:
    """Cached resolvent on the mode's fine grid; zero once t k passes the decay cap."""
    key = ("ghat_fine", float(k), float(dt), int(n))
    if key in profile._tables:
        return profile._tables[key]
    p_cap = kernel_cutoff(profile) + 130.0
    n_need = min(n, int(p_cap / (k * dt)) + 2)
    G = np.zeros(n)
    G[:n_need] = ghat_resolvent(profile, k, dt * np.arange(n_need))
    profile._tables[key] = G
    return G


def _rhohat_ladder(profile: Profile, V: float, k: float, y: np.ndarray,
                   R_list: np.ndarray, dt: float):
    """rhohat(R, xi)/(-e0 Phihat) for each R in R_list and each resonance y.

    Modes share |xi| = k; y parametrizes the angle through om = -k y.
    Returns W of shape (n_R, n_y) with rhohat = -e0 Phihat(k) W.
    """
    R_max = float(R_list[-1])
    n = int(round(R_max / dt)) + 1
    tau = dt * np.arange(n)
    om = -k * y                                          # (ny,)
    mvals = _m_osc(profile, tau, k)
    osc = np.exp(1j * np.outer(om, tau))                 # (ny, n)
    integ = osc * mvals[None, :]
    # cumulative trapezoid: M[j] = int_0^{tau_j} e^{i om s} m(s) ds
    M = np.empty_like(integ)
    M[:, 0] = 0.0
    np.cumsum(0.5 * dt * (integ[:, 1:] + integ[:, :-1]), axis=1, out=M[:, 1:])
    G = _ghat_fine(profile, k, dt, n)
    nG = int(np.nonzero(np.abs(G) > 1e-14)[0][-1]) + 1 if np.any(np.abs(G) > 1e-14) else 1
    out = np.empty((len(R_list), len(y)), dtype=complex)
    wconv = np.full(nG, dt)
    wconv[0] = 0.5 * dt
    gw = G[:nG] * wconv
    for iR, R in enumerate(R_list):
        nR = int(round(R / dt))
        m_idx = nR - np.arange(nG)
        valid = m_idx >= 0   # endpoint terms carry Ghat(0) = 0 and M(0) = 0
        conv = (osc[:, :nG][:, valid] * M[:, m_idx[valid]]) @ gw[valid]
        out[iR] = M[:, nR] + conv
    return out


def force_timedomain(profile: Profile, R: float, Vstar, n_k: int = 32, n_y: int = 64,
                     dR_plateau: float = 5.0, plateau_rtol: float = 1e-3,
                     R_max: float | None = None) -> StoppingResult:
    """Force at t = R from the marched per-mode response, with plateau detection.

    Evaluates F on the ladder {dR, 2 dR, ..., R} (extended to R_max if the
    plateau test fails at R) and returns the value at the first plateaued R.
    """
    V3 = np.asarray(Vstar, dtype=float)
    V = float(np.linalg.norm(V3))
    if V <= profile.support_speed:
        raise ValueError(
            f"|V*| = {V:g} must exceed the profile support speed {profile.support_speed:g}")
    Vhat = V3 / V
    R_max = R_max if R_max is not None else max(R, 60.0)
    n_lad = int(round(R_max / dR_plateau))
    R_list = dR_plateau * np.arange(1, n_lad + 1)
    k, wk, y, wy = _force_grids(profile, V, n_k, n_y)

    f_par = np.zeros(len(R_list))
    for ik, kk in enumerate(k):
        dt = min(0.05, 0.2 / (kk * V), 0.0125 / max(kk, 0.4))
        dt = R_max / math.ceil(R_max / dt)
        W = _rhohat_ladder(profile, V, kk, y, R_list, dt)
        weight = kk**3 * phi_hat(kk) * Phi_hat(profile, kk)
        f_par += -(1.0 / (2.0 * math.pi) ** 2 / V**2) * weight * (W.imag @ (wy * y)) * wk[ik]

    i_req = int(np.searchsorted(R_list, min(R, R_list[-1]) - 1e-9))
    plateau_at = None
    for i in range(max(1, i_req), len(R_list)):
        if abs(f_par[i] - f_par[i - 1]) < plateau_rtol * abs(f_par[i]):
            plateau_at = i
            break
    if plateau_at is None:
        return StoppingResult(Vstar=V3, force=f_par[-1] * Vhat,
                              A_est=-(V**2) * f_par[-1], route="timedomain",
                              plateau=False, R_used=float(R_list[-1]))
    fp = f_par[plateau_at]
    return StoppingResult(Vstar=V3, force=fp * Vhat, A_est=-(V**2) * fp,
                          route="timedomain", plateau=True,
                          R_used=float(R_list[plateau_at]))


def stopping_coefficient(profile: Profile, Vstar, route: str = "steadystate",
                         **kwargs) -> StoppingResult:
    """A such that F . Vhat ~ -A/|V*|^2; positive for stable profiles."""
    if route == "steadystate":
        return force_steadystate(profile, Vstar, **kwargs)
    if route == "timedomain":
        V = float(np.linalg.norm(np.asarray(Vstar, dtype=float)))
        return force_timedomain(profile, kwargs.pop("R", max(40.0, 4.0 * V)), Vstar, **kwargs)
    raise ValueError(f"unknown route {route!r}")

"""Dispersion function a(z), its boundary values, and the Penrose stability margin.

a(z) = -int_0^inf e^{-ipz} p mu_hat(p e1) dp  for Im z <= 0.

For real x the boundary value gamma(x) = a(x - i0) has the marginal
representation a(z) = int m'(u)/(u - z) du with m the first-coordinate
marginal of mu, so

    Re gamma(x) = PV int m'(u)/(u - x) du,
    Im gamma(x) = -pi m'(x),

the imaginary part being the Plemelj delta contribution at the pole. The
stability margin is kappa = inf |1 - phihat(xi) a(z)| over Im z <= 0, sampled
on the boundary curve plus a log-spaced sweep into the lower half plane.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .profiles import (
    Profile,
    marginal,
    marginal_prime,
    mu_hat_cutoff,
    mu_hat_line,
    phi_hat,
)

__all__ = ["PenroseReport", "a_interior", "a_boundary", "penrose_margin", "UnstableProfileError"]

DEFAULT_KAPPA_MIN = 1e-3


class UnstableProfileError(RuntimeError):
    """Raised downstream when the Penrose margin is below kappa_min."""


@dataclass(frozen=True)
class PenroseReport:
    kappa: float
    winding: int
    curve_x: np.ndarray          # real grid of the boundary sweep
    curve: np.ndarray            # gamma(x) on that grid
    stable: bool
    kappa_min: float
    xi_worst: float              # |xi| attaining the margin


# ---------------------------------------------------------------------------
# interior values
# ---------------------------------------------------------------------------

def a_interior(profile: Profile, z: complex, eps: float = 1e-6) -> complex:
    """a(z) for Im z <= -eps by panelized Gauss-Legendre in p.

    The integrand p mu_hat(p) e^{-ipz} decays through mu_hat; panels are sized
    to resolve the e^{-ipx} oscillation at x = Re z.
    """
    z = complex(z)
    if z.imag > -eps / 2:
        raise ValueError(f"a_interior requires Im z <= -{eps/2:g}; got {z.imag:g}"
                         " (use a_boundary for the real axis)")
    return complex(_a_lower(profile, np.array([z]))[0])


def _a_lower(profile: Profile, z: np.ndarray) -> np.ndarray:
    """Vectorized a(z) for an array of points with Im z < 0 (or tiny negative)."""
    if profile.mu_kind == "empty":
        return np.zeros(len(z), dtype=complex)
    p_cut = mu_hat_cutoff(profile)
    x_max = float(np.max(np.abs(z.real))) if len(z) else 1.0
    # >= 8 GL nodes per oscillation of e^{-ip Re z}, and enough for mu_hat itself
    n_panels = max(16, int(p_cut * max(1.0, x_max) / 2.0))
    n_panels = min(n_panels, 4000)
    edges = np.linspace(0.0, p_cut, n_panels + 1)
    gx, gw = leggauss(8)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    p = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
    w = (half[:, None] * gw[None, :]).ravel()
    f = w * p * mu_hat_line(profile, p)
    # sum_j f_j exp(-i p_j z) for each z, chunked to bound the outer product
    out = np.empty(len(z), dtype=complex)
    for lo in range(0, len(z), 64):
        sl = slice(lo, min(lo + 64, len(z)))
        out[sl] = -(np.exp(-1j * np.outer(z[sl], p)) @ f)
    return out


# ---------------------------------------------------------------------------
# boundary values
# ---------------------------------------------------------------------------

def _pv_grid(profile: Profile, n: int = 4001):
    """Cached Simpson grid over the marginal support for the PV integral."""
    if ("pv_grid", n) in profile._tables:
        return profile._tables[("pv_grid", n)]
    U = profile.velocity_cutoff + 2.0
    # n odd for composite Simpson
    u = np.linspace(-U, U, n)
    h = u[1] - u[0]
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= h / 3.0
    mp = marginal_prime(profile, u)
    tab = (u, w, mp, U)
    profile._tables[("pv_grid", n)] = tab
    return tab


def a_boundary(profile: Profile, x, n_pv: int = 4001) -> complex | np.ndarray:
    """gamma(x) = lim_{eps->0} a(x - i eps) for real x (vectorized).

    Real part: PV integral of m'(u)/(u-x) with the singularity removed by
    subtracting m'(x) (the odd leading term cancels on the symmetric grid and
    the remainder integrates in closed form as a log). Imaginary part: the
    Plemelj delta term -pi m'(x). n_pv is the Simpson grid density
    (refinement knob for the asymptotics study).
    """
    scalar = np.ndim(x) == 0
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if profile.mu_kind == "empty":
        out = np.zeros(len(x_arr), dtype=complex)
        return complex(out[0]) if scalar else out
    if len(x_arr) > 2048:
        out = np.empty(len(x_arr), dtype=complex)
        for lo in range(0, len(x_arr), 2048):
            sl = slice(lo, min(lo + 2048, len(x_arr)))
            out[sl] = a_boundary(profile, x_arr[sl], n_pv=n_pv)
        return out

    u, w, mp, U = _pv_grid(profile, n_pv)
    re = np.empty(len(x_arr))
    im = -math.pi * marginal_prime(profile, x_arr)

    inside = np.abs(x_arr) < U - 1e-12
    # subtraction scheme inside the grid window
    if np.any(inside):
        xi = x_arr[inside]
        mpx = marginal_prime(profile, xi)
        diff = u[None, :] - xi[:, None]
        tiny = np.abs(diff) < 1e-9
        diff[tiny] = 1.0
        integrand = (mp[None, :] - mpx[:, None]) / diff
        if np.any(tiny):
            # the quotient tends to m''(x) at the pole node
            h2 = 1e-5
            d2 = (marginal_prime(profile, xi + h2) - marginal_prime(profile, xi - h2)) / (2 * h2)
            integrand[tiny] = np.broadcast_to(d2[:, None], tiny.shape)[tiny]
        re[inside] = integrand @ w + mpx * np.log(np.abs((U - xi) / (U + xi)))
    # plain quadrature outside (m' vanishes there or is negligible); guard the
    # case where x coincides with a grid endpoint
    if np.any(~inside):
        xo = x_arr[~inside]
        diff = u[None, :] - xo[:, None]
        tiny = np.abs(diff) < 1e-9
        diff[tiny] = 1.0
        integrand = mp[None, :] / diff
        integrand[tiny] = 0.0
        re[~inside] = integrand @ w
    out = re + 1j * im
    return complex(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Penrose margin
# ---------------------------------------------------------------------------

def _winding_number(points: np.ndarray, warn_label: str = "") -> int:
    """Winding of a discrete closed curve about 0 (closure through the first point)."""
    pts = np.concatenate([points, points[:1]])
    ang = np.angle(pts)
    dang = np.diff(ang)
    dang = (dang + math.pi) % (2.0 * math.pi) - math.pi
    if np.any(np.abs(dang) > math.pi / 2):
        warnings.warn(
            f"penrose winding: adjacent curve points separated by more than pi/2 "
            f"{warn_label}; refine x_grid", stacklevel=2)
    total = float(np.sum(dang))
    return int(round(total / (2.0 * math.pi)))


def penrose_margin(profile: Profile, xi_grid, x_grid,
                   kappa_min: float = DEFAULT_KAPPA_MIN) -> PenroseReport:
    """Stability margin and argument-principle winding test.

    kappa = min over |xi| in xi_grid and z in {boundary curve} u {interior
    log-sweep} of |1 - phihat(xi) a(z)|; winding is computed at the worst xi.
    """
    xi_grid = np.atleast_1d(np.asarray(xi_grid, dtype=float))
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    if len(xi_grid) == 0 or len(x_grid) == 0:
        raise ValueError("xi_grid and x_grid must be nonempty")

    gamma = a_boundary(profile, x_grid)
    phis = phi_hat(np.abs(xi_grid))

    # interior samples: holomorphic decay pushes extrema to the boundary,
    # so a coarse log sweep below the axis suffices
    eps_sweep = np.logspace(-4, 1, 12)
    x_sub = x_grid[:: max(1, len(x_grid) // 64)]
    zs = (x_sub[None, :] - 1j * eps_sweep[:, None]).ravel()
    a_int = _a_lower(profile, zs)

    a_all = np.concatenate([gamma, a_int])
    dist = np.abs(1.0 - np.outer(phis, a_all))
    kappa = float(dist.min())
    i_worst = int(np.unravel_index(np.argmin(dist), dist.shape)[0])
    xi_worst = float(np.abs(xi_grid[i_worst]))

    curve_worst = 1.0 - phis[i_worst] * gamma
    winding = _winding_number(curve_worst, warn_label=f"at |xi|={xi_worst:g}")

    stable = bool(kappa >= kappa_min and winding == 0)
    # argument-principle guard: gamma crossing the half-line y > 1/phihat_max
    phimax = float(np.max(phis))
    im = gamma.imag
    for j in range(len(x_grid) - 1):
        if im[j] == 0.0 and gamma.real[j] > 1.0 / phimax:
            stable = False
        if im[j] * im[j + 1] < 0.0:
            t = im[j] / (im[j] - im[j + 1])
            re_cross = gamma.real[j] + t * (gamma.real[j + 1] - gamma.real[j])
            if re_cross > 1.0 / phimax:
                stable = False
    return PenroseReport(kappa=kappa, winding=winding, curve_x=x_grid, curve=gamma,
                         stable=stable, kappa_min=kappa_min, xi_worst=xi_worst)


def default_penrose_report(profile: Profile, kappa_min: float = DEFAULT_KAPPA_MIN,
                           n_x: int = 801) -> PenroseReport:
    """Margin on the default grids: |xi| log-spaced, x covering the Im support."""
    xi_grid = np.concatenate([[1e-4], np.logspace(-3, 1.5, 40)])
    span = profile.velocity_cutoff + 3.0
    x_grid = np.linspace(-span, span, n_x)
    return penrose_margin(profile, xi_grid, x_grid, kappa_min=kappa_min)

"""Physical inputs: velocity density mu, screened potential phi, charge potential Phi.

All downstream modules consume a frozen :class:`Profile`. The velocity density
is radial, normalized to a probability density, and monotone (v . grad mu <= 0).
The screened Coulomb symbol is fixed to phihat(xi) = 1/(1+|xi|^2); the smooth
charge potential is a Gaussian with positive transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline

__all__ = [
    "Profile",
    "build_profile",
    "empty_profile",
    "mu_eval",
    "mu_grad",
    "mu_hat_line",
    "marginal",
    "marginal_prime",
    "phi_hat",
    "phi_real",
    "phi_real_grad_mag",
    "Phi_hat",
    "Phi_eval",
    "Phi_grad",
]

_GL64 = leggauss(64)
_GL256 = leggauss(256)


def _gl_nodes(a: float, b: float, rule=_GL64):
    x, w = rule
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


@dataclass(frozen=True)
class Profile:
    """Immutable physical configuration; safe to share across workers."""

    mu_kind: str                 # "gaussian" | "truncated_bump" | "empty"
    e0: int                      # +1 attractive source sign, -1 repulsive
    alpha: float                 # coupling strength in the charge ODE
    mu_radius: float = 0.0       # bump support radius (truncated_bump)
    mu_sigma: float = 0.0        # gaussian velocity spread
    Phi_width: float = 1.0
    Phi_amplitude: float = 1.0   # C_Phi; 0 gives the Phi == 0 test fixture
    _norm: float = 1.0           # bump normalization, set by build_profile
    _tables: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    @property
    def velocity_cutoff(self) -> float:
        """Radius beyond which mu is zero (bump) or negligible (< 1e-15, gaussian)."""
        if self.mu_kind == "truncated_bump":
            return self.mu_radius
        if self.mu_kind == "gaussian":
            return 8.5 * self.mu_sigma
        return 0.0

    @property
    def support_speed(self) -> float:
        """Speed the point charge must exceed for the stopping-power regime."""
        if self.mu_kind == "truncated_bump":
            return self.mu_radius
        if self.mu_kind == "gaussian":
            return 4.0 * self.mu_sigma
        return 0.0

    @property
    def compact_support(self) -> bool:
        return self.mu_kind in ("truncated_bump", "empty")

    def second_moment_line(self) -> float:
        """int v1^2 mu(v) dv, the coefficient in the large-r expansion of a(r)."""
        if self.mu_kind == "gaussian":
            return self.mu_sigma**2
        if self.mu_kind == "empty":
            return 0.0
        u, w = _gl_nodes(0.0, self.mu_radius, _GL256)
        return float(2.0 * np.sum(w * u**2 * marginal(self, u)))


def build_profile(config: dict) -> Profile:
    """Validate a flat key-value config and return a normalized Profile.

    Recognized keys: mu.kind, mu.radius, mu.sigma, e0, alpha, Phi.width,
    Phi.amplitude. Unknown keys are rejected.
    """
    known = {"mu.kind", "mu.radius", "mu.sigma", "e0", "alpha", "Phi.width", "Phi.amplitude"}
    unknown = set(config) - known
    if unknown:
        raise ValueError(f"unknown profile keys: {sorted(unknown)}")

    kind = config.get("mu.kind", "gaussian")
    e0 = int(config.get("e0", 1))
    if e0 not in (1, -1):
        raise ValueError("e0 must be +1 or -1")
    alpha = float(config.get("alpha", 1.0))
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    width = float(config.get("Phi.width", 1.0))
    if width <= 0:
        raise ValueError("Phi.width must be positive")
    amp = float(config.get("Phi.amplitude", 1.0))
    if amp < 0:
        raise ValueError("Phi.amplitude must be nonnegative")

    if kind == "gaussian":
        sigma = float(config.get("mu.sigma", 1.0))
        if sigma <= 0:
            raise ValueError("mu.sigma must be positive")
        return Profile(mu_kind="gaussian", e0=e0, alpha=alpha, mu_sigma=sigma,
                       Phi_width=width, Phi_amplitude=amp)
    if kind == "truncated_bump":
        radius = float(config.get("mu.radius", 2.0))
        if radius <= 0:
            raise ValueError("mu.radius must be positive")
        # normalize so that the 3D integral of the bump is exactly 1
        q, w = _gl_nodes(0.0, radius, _GL256)
        raw = np.exp(-1.0 / (1.0 - (q / radius) ** 2))
        norm = 1.0 / float(4.0 * math.pi * np.sum(w * q**2 * raw))
        return Profile(mu_kind="truncated_bump", e0=e0, alpha=alpha, mu_radius=radius,
                       Phi_width=width, Phi_amplitude=amp, _norm=norm)
    raise ValueError(f"unknown mu.kind: {kind!r}")


def empty_profile(e0: int = 1, alpha: float = 1.0, Phi_width: float = 1.0,
                  Phi_amplitude: float = 1.0) -> Profile:
    """mu == 0 test fixture (empty plasma); bypasses the probability normalization."""
    return Profile(mu_kind="empty", e0=e0, alpha=alpha,
                   Phi_width=Phi_width, Phi_amplitude=Phi_amplitude)


# ---------------------------------------------------------------------------
# velocity density
# ---------------------------------------------------------------------------

def _mu_radial(profile: Profile, q):
    """mu as a function of speed q = |v| (vectorized)."""
    q = np.asarray(q, dtype=float)
    if profile.mu_kind == "gaussian":
        s2 = profile.mu_sigma**2
        return (2.0 * math.pi * s2) ** -1.5 * np.exp(-0.5 * q**2 / s2)
    if profile.mu_kind == "empty":
        return np.zeros_like(q)
    R = profile.mu_radius
    out = np.zeros_like(q)
    inside = q < R
    x = (q[inside] / R) ** 2
    out[inside] = profile._norm * np.exp(-1.0 / (1.0 - x))
    return out


def _mu_radial_dq(profile: Profile, q):
    """d mu / dq as a function of speed (vectorized)."""
    q = np.asarray(q, dtype=float)
    if profile.mu_kind == "gaussian":
        return -q / profile.mu_sigma**2 * _mu_radial(profile, q)
    if profile.mu_kind == "empty":
        return np.zeros_like(q)
    R = profile.mu_radius
    out = np.zeros_like(q)
    inside = q < R
    x = (q[inside] / R) ** 2
    out[inside] = _mu_radial(profile, q[inside]) * (-2.0 * q[inside] / R**2) / (1.0 - x) ** 2
    return out


def mu_eval(profile: Profile, v) -> float | np.ndarray:
    """mu(v) for a 3-vector v, or an (N,3) batch."""
    v = np.asarray(v, dtype=float)
    q = np.linalg.norm(v, axis=-1)
    out = _mu_radial(profile, np.atleast_1d(q))
    return float(out[0]) if v.ndim == 1 else out


def mu_grad(profile: Profile, v) -> np.ndarray:
    """grad mu(v) = (mu'(|v|)/|v|) v, zero at the origin by radial symmetry."""
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    v2 = np.atleast_2d(v)
    q = np.linalg.norm(v2, axis=1)
    fac = np.zeros_like(q)
    nz = q > 0
    fac[nz] = _mu_radial_dq(profile, q[nz]) / q[nz]
    out = fac[:, None] * v2
    return out[0] if single else out


# ---------------------------------------------------------------------------
# first-coordinate marginal and its line Fourier transform
# ---------------------------------------------------------------------------

def marginal(profile: Profile, u) -> np.ndarray:
    """Marginal of mu along the first coordinate: int mu(u, v_perp) dv_perp.

    For radial mu this is 2*pi * int_{|u|}^{inf} mu(q) q dq.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if profile.mu_kind == "gaussian":
        s2 = profile.mu_sigma**2
        return (2.0 * math.pi * s2) ** -0.5 * np.exp(-0.5 * u**2 / s2)
    if profile.mu_kind == "empty":
        return np.zeros_like(u)
    R = profile.mu_radius
    out = np.zeros_like(u)
    au = np.abs(u)
    inside = au < R
    if np.any(inside):
        x, w = _GL256
        a = au[inside]
        # map [a, R] panels to GL nodes, vectorized over the batch
        mid = 0.5 * (R + a)[:, None]
        half = 0.5 * (R - a)[:, None]
        q = mid + half * x[None, :]
        out[inside] = 2.0 * math.pi * np.sum(half * w[None, :] * q * _mu_radial(profile, q), axis=1)
    return out


def marginal_prime(profile: Profile, u) -> np.ndarray:
    """d/du of the marginal; equals -2*pi*u*mu(|u|) exactly for radial mu."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return -2.0 * math.pi * u * _mu_radial(profile, np.abs(u))


def _mu_hat_table(profile: Profile):
    """Dense table of the line transform, built once per profile."""
    if "mu_hat" in profile._tables:
        return profile._tables["mu_hat"]
    if profile.mu_kind == "empty":
        tab = (np.array([0.0, 1.0]), np.array([0.0, 0.0]), 1.0)
        profile._tables["mu_hat"] = tab
        return tab
    U = profile.velocity_cutoff
    p_grid = np.arange(0.0, 200.0 + 1e-9, 0.01)
    # single dense GL rule resolves cos(p u) up to p_max = 200 on [0, U]
    n_nodes = max(256, int(8 * 200.0 * U / math.pi))
    x, w = leggauss(min(n_nodes, 4096))
    u = 0.5 * U * (x + 1.0)
    wu = 0.5 * U * w
    f = wu * marginal(profile, u)
    vals = np.empty_like(p_grid)
    for lo in range(0, len(p_grid), 2000):   # chunked to bound the cos matrix
        sl = slice(lo, min(lo + 2000, len(p_grid)))
        vals[sl] = 2.0 * np.cos(np.outer(p_grid[sl], u)) @ f
    # cut the table where the transform has decayed for good
    tail = np.nonzero(np.abs(vals) > 1e-15)[0]
    p_cut = p_grid[tail[-1]] if len(tail) else 1.0
    spline = CubicSpline(p_grid, vals)
    tab = (p_grid, vals, float(p_cut), spline)
    profile._tables["mu_hat"] = tab
    return tab


def mu_hat_line(profile: Profile, p) -> float | np.ndarray:
    """3D Fourier transform of mu at p*e1 (= 1D transform of the marginal); real, even."""
    p_arr = np.abs(np.atleast_1d(np.asarray(p, dtype=float)))
    if profile.mu_kind == "gaussian":
        out = np.exp(-0.5 * profile.mu_sigma**2 * p_arr**2)
    elif profile.mu_kind == "empty":
        out = np.zeros_like(p_arr)
    else:
        _, _, p_cut, spline = _mu_hat_table(profile)
        out = np.where(p_arr <= p_cut, spline(np.minimum(p_arr, p_cut)), 0.0)
    return float(out[0]) if np.isscalar(p) or np.ndim(p) == 0 else out


def mu_hat_cutoff(profile: Profile) -> float:
    """p beyond which |mu_hat_line| < 1e-15 (kernel memory truncation)."""
    if profile.mu_kind == "gaussian":
        return 8.5 / profile.mu_sigma
    if profile.mu_kind == "empty":
        return 1.0
    return _mu_hat_table(profile)[2]


def pmu_peak(profile: Profile) -> float:
    """max over p of |p mu_hat_line(p)|; bounds the Volterra kernel amplitude."""
    if profile.mu_kind == "empty":
        return 0.0
    if profile.mu_kind == "gaussian":
        return math.exp(-0.5) / profile.mu_sigma
    p_grid, vals, _, _ = _mu_hat_table(profile)
    return float(np.max(np.abs(p_grid * vals)))


def kernel_cutoff(profile: Profile, rel: float = 1e-10) -> float:
    """p beyond which |p*mu_hat_line(p)| drops below rel * its maximum.

    Sets the memory length of the time-convolution kernels downstream.
    """
    if profile.mu_kind == "empty":
        return 1.0
    if profile.mu_kind == "gaussian":
        # p*exp(-s^2 p^2/2) peaks at 1/s; solve the tail level directly
        s = profile.mu_sigma
        p = 1.0 / s
        peak = p * math.exp(-0.5)
        while p * math.exp(-0.5 * s**2 * p**2) > rel * peak:
            p += 0.1 / s
        return p
    p_grid, vals, p_cut, _ = _mu_hat_table(profile)
    mag = np.abs(p_grid * vals)
    peak = mag.max()
    above = np.nonzero(mag > rel * peak)[0]
    return float(p_grid[above[-1]]) if len(above) else p_cut


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

def phi_hat(xi) -> float | np.ndarray:
    """Screened Coulomb symbol 1/(1+|xi|^2); accepts a 3-vector or |xi| values."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim and xi.shape[-1] == 3 and xi.ndim <= 2:
        k2 = np.sum(xi * xi, axis=-1)
    else:
        k2 = xi * xi
    out = 1.0 / (1.0 + k2)
    return float(out) if np.ndim(out) == 0 else out


def phi_real(r):
    """Real-space screened kernel e^{-r}/(4 pi r)."""
    r = np.asarray(r, dtype=float)
    return np.exp(-r) / (4.0 * math.pi * np.maximum(r, 1e-300))


def phi_real_grad_mag(r):
    """|grad phi|(r) = e^{-r}(1+r)/(4 pi r^2), directed toward decreasing r."""
    r = np.asarray(r, dtype=float)
    return np.exp(-r) * (1.0 + r) / (4.0 * math.pi * np.maximum(r, 1e-300) ** 2)


def Phi_hat(profile: Profile, xi) -> float | np.ndarray:
    """Transform of the Gaussian charge potential; strictly positive."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim and xi.shape[-1] == 3 and xi.ndim <= 2:
        k2 = np.sum(xi * xi, axis=-1)
    else:
        k2 = xi * xi
    w = profile.Phi_width
    out = profile.Phi_amplitude * (2.0 * math.pi) ** 1.5 * w**3 * np.exp(-0.5 * w**2 * k2)
    return float(out) if np.ndim(out) == 0 else out


def Phi_eval(profile: Profile, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    r2 = np.sum(np.atleast_2d(x) ** 2, axis=1)
    out = profile.Phi_amplitude * np.exp(-0.5 * r2 / profile.Phi_width**2)
    return float(out[0]) if x.ndim == 1 else out


def Phi_grad(profile: Profile, x) -> np.ndarray:
    """grad Phi(x) = -(x/w^2) Phi(x) (vectorized over rows)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    vals = Phi_eval(profile, x2)
    out = -x2 / profile.Phi_width**2 * np.asarray(vals)[:, None]
    return out[0] if single else out

"""Coarse delta-f marker simulation of the coupled charge-plasma system.

Markers carry the perturbation f = F - mu only: weights evolve as
dw/dt = -Ebar . grad mu(v) / (N q), with q the phase-space loading density
(frozen along trajectories by Liouville). The density rho[f] is deposited on
a periodic grid by cloud-in-cell, the screened field comes from the spectral
multiplier Ehat = -i xi rhohat/(1+|xi|^2), and the point charge is advanced
by the deposited field at its position. Marker loading is quasi-random
(Halton) with importance density g proportional to mu + floor.

Desk-scale only: the periodic box stands in for an infinite plasma, which is
an uncontrolled approximation (wake wrap-around); acceptance for this module
is property-based (drag sign, monotone deceleration, order of magnitude).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .profiles import Phi_grad, Profile, _mu_radial, mu_grad, phi_hat

__all__ = ["SimState", "run_deltaf", "force_on_charge", "load_markers", "CFLError"]


class CFLError(RuntimeError):
    pass


@dataclass
class SimState:
    profile: Profile
    x: np.ndarray            # (N, 3) marker positions, lab frame
    v: np.ndarray            # (N, 3) marker velocities (half-step staggered)
    w: np.ndarray            # (N,) delta-f weights, w_i ~ f_i/(N q_i)
    inv_nq: np.ndarray       # (N,) 1/(N q_i), frozen at load
    X: np.ndarray            # charge position
    V: np.ndarray            # charge velocity (half-step staggered)
    box_L: float
    grid_n: int
    origin: np.ndarray       # deposition window corner, lab frame
    t: float
    rng_seed: int
    rho: np.ndarray | None = None         # (n, n, n) last deposited rho[f]
    E_grid: np.ndarray | None = None      # (3, n, n, n) last field

    @property
    def cell(self) -> float:
        return self.box_L / self.grid_n


def load_markers(profile: Profile, n_markers: int, box_L: float, seed: int,
                 floor_frac: float = 1e-3):
    """Quasi-random marker load on supp(mu) x box with g ~ mu + floor.

    Velocities come from the exact radial inverse CDF of 4 pi r^2 g(r) driven
    by a 6D Sobol stream (3 for x, cos-theta/phi/radius for v): deterministic
    given the seed, no rejection. Returns (x_unit, v, inv_nq).
    """
    R = profile.velocity_cutoff
    mu_max = float(_mu_radial(profile, np.array([0.0]))[0])
    floor = floor_frac * mu_max
    vol = 4.0 / 3.0 * math.pi * R**3
    g_mass = 1.0 + floor * vol           # int (mu + floor) over the ball
    r_grid = np.linspace(0.0, R, 4001)
    shell = 4.0 * math.pi * r_grid**2 * (_mu_radial(profile, r_grid) + floor)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (shell[1:] + shell[:-1])
                                           * np.diff(r_grid))])
    cdf /= cdf[-1]
    # antithetic pairs (x, v), (x, -v): the odd-in-v part of marker sums
    # cancels exactly at load, improving the sum(w) conservation diagnostic
    half = (n_markers + 1) // 2
    sampler = qmc.Sobol(d=6, scramble=True, seed=seed)
    u = sampler.random_base2(max(1, math.ceil(math.log2(half))))[:half]
    cos_t = 2.0 * u[:, 3] - 1.0
    phi = 2.0 * math.pi * u[:, 4]
    sin_t = np.sqrt(np.maximum(1.0 - cos_t**2, 0.0))
    r = np.interp(u[:, 5], cdf, r_grid)
    v_half = np.stack([r * cos_t, r * sin_t * np.cos(phi), r * sin_t * np.sin(phi)],
                      axis=1)
    x_unit = np.concatenate([u[:, :3], u[:, :3]])[:n_markers]
    v = np.concatenate([v_half, -v_half])[:n_markers]
    r = np.linalg.norm(v, axis=1)
    g_v = (_mu_radial(profile, r) + floor) / g_mass      # velocity density
    q = g_v / box_L**3
    inv_nq = 1.0 / (n_markers * q)
    return x_unit, v, inv_nq


def _cic_stencil(x_rel: np.ndarray, n: int, cell: float):
    """Shared CIC corner indices/weights: 8 pairs (flat int32, weight)."""
    s = x_rel * (1.0 / cell)
    i0 = s.astype(np.int32)     # x_rel in [0, L) so floor == truncation
    f = s - i0
    idx = []
    for ax in range(3):
        a0 = i0[:, ax]
        a1 = a0 + 1
        a1[a1 == n] = 0
        idx.append((a0, a1))
    wts = [(1.0 - f[:, ax], f[:, ax]) for ax in range(3)]
    out = []
    for cx in (0, 1):
        base_x = idx[0][cx].astype(np.int32) * n
        for cy in (0, 1):
            base_xy = (base_x + idx[1][cy]) * n
            wxy = wts[0][cx] * wts[1][cy]
            for cz in (0, 1):
                out.append((base_xy + idx[2][cz], wxy * wts[2][cz]))
    return out


def _deposit_cic(x_rel: np.ndarray, w: np.ndarray, n: int, cell: float,
                 stencil=None) -> np.ndarray:
    """CIC deposition of weights onto the periodic n^3 grid (density units)."""
    stencil = stencil or _cic_stencil(x_rel, n, cell)
    rho = np.zeros(n**3)
    for flat, wgt in stencil:
        rho += np.bincount(flat, weights=w * wgt, minlength=n**3)
    return rho.reshape(n, n, n) / cell**3


def _gather_cic(grids, x_rel: np.ndarray, n: int, cell: float, stencil=None) -> np.ndarray:
    """Trilinear interpolation of per-component grids at marker positions."""
    stencil = stencil or _cic_stencil(x_rel, n, cell)
    flat_grids = np.stack([np.asarray(g).ravel() for g in grids], axis=1)
    out = np.zeros((len(x_rel), flat_grids.shape[1]))
    for flat, wgt in stencil:
        out += wgt[:, None] * flat_grids[flat]
    return out


def _field_solve(rho: np.ndarray, box_L: float):
    """E = -grad(phi * rho) via the spectral screened multiplier."""
    n = rho.shape[0]
    rho_hat = np.fft.rfftn(rho)
    k1 = 2.0 * math.pi * np.fft.fftfreq(n, d=box_L / n)
    k3 = 2.0 * math.pi * np.fft.rfftfreq(n, d=box_L / n)
    KX, KY, KZ = np.meshgrid(k1, k1, k3, indexing="ij")
    k2 = KX**2 + KY**2 + KZ**2
    mult = -1j / (1.0 + k2)
    E = np.empty((3, n, n, n))
    for c, KK in enumerate((KX, KY, KZ)):
        E[c] = np.fft.irfftn(mult * KK * rho_hat, s=rho.shape, axes=(0, 1, 2))
    return E


def force_on_charge(state: SimState) -> np.ndarray:
    """Deposited-field value E = -(grad phi * rho)(X), trilinear at the charge."""
    if state.E_grid is None:
        raise ValueError("no deposited field available; advance the state first")
    x_rel = (state.X - state.origin) % state.box_L
    return _gather_cic(list(state.E_grid), x_rel[None, :], state.grid_n, state.cell)[0]


def run_deltaf(profile: Profile, V0: float, t_end: float, box_L: float = 48.0,
               grid_n: int = 32, n_markers: int = 2_000_000, seed: int = 7,
               dt: float = 0.05, recenter_every: float = 1.0,
               record_every: int = 10, snapshot_times=()):
    """Leapfrog delta-f run; returns (record dict, final SimState, snapshots).

    The record holds charge samples (t, X1, V1, F1) and the weight-sum
    diagnostic; snapshots are (t, rho-slice) pairs at the requested times.
    """
    cell = box_L / grid_n
    if profile.velocity_cutoff * dt > 0.5 * cell:
        raise CFLError(
            f"marker speed {profile.velocity_cutoff:g} exceeds the CFL bound "
            f"{0.5*cell/dt:g} for dt = {dt:g}")
    x_unit, v, inv_nq = load_markers(profile, n_markers, box_L, seed)
    X = np.zeros(3)
    V = np.array([V0, 0.0, 0.0])
    origin = X - 0.5 * box_L
    x = origin + x_unit * box_L
    w = np.zeros(n_markers)
    state = SimState(profile=profile, x=x, v=v, w=w, inv_nq=inv_nq, X=X, V=V,
                     box_L=box_L, grid_n=grid_n, origin=origin, t=0.0, rng_seed=seed)
    alpha, e0 = profile.alpha, profile.e0

    n_steps = int(round(t_end / dt))
    rec = {"t": [], "X1": [], "V1": [], "F1": [], "wsum": []}
    snapshots = []
    snap_left = sorted(snapshot_times)
    phi_reach = 8.0 * profile.Phi_width   # farther out grad Phi is below 1e-13

    def ebar_markers(E, x_rel, stencil):
        Em = _gather_cic(list(E), x_rel, grid_n, cell, stencil)
        # nearest-image displacement: on the periodic surrogate the charge
        # must kick every marker that passes its torus position
        dx = state.x - state.X
        dx -= box_L * np.round(dx / box_L)
        near = np.einsum("ij,ij->i", dx, dx) < phi_reach**2
        if np.any(near) and profile.Phi_amplitude != 0.0:
            Em[near] += e0 * Phi_grad(profile, dx[near])
        return Em

    def fields_now():
        x_rel = (state.x - state.origin) % box_L
        stencil = _cic_stencil(x_rel, grid_n, cell)
        rho = _deposit_cic(x_rel, state.w, grid_n, cell, stencil)
        E = _field_solve(rho, box_L)
        state.rho, state.E_grid = rho, E
        return x_rel, stencil, E

    # initial half-step backward for the staggered scheme
    x_rel, stencil, E = fields_now()
    Ebar = ebar_markers(E, x_rel, stencil)
    state.v -= 0.5 * dt * Ebar
    Ech = _gather_cic(list(E), ((state.X - state.origin) % box_L)[None, :], grid_n, cell)[0]
    state.V -= 0.5 * dt * (-alpha * e0 * Ech)

    next_recenter = recenter_every
    for step in range(n_steps):
        x_rel, stencil, E = fields_now()
        Ebar = ebar_markers(E, x_rel, stencil)
        v_sync = state.v + (0.5 * dt) * Ebar
        gmu = mu_grad(profile, v_sync)
        state.w -= dt * np.einsum("ij,ij->i", Ebar, gmu) * state.inv_nq
        state.v = v_sync + (0.5 * dt) * Ebar
        state.x += dt * state.v

        Ech = _gather_cic(list(E), ((state.X - state.origin) % box_L)[None, :],
                          grid_n, cell)[0]
        F_ch = -alpha * e0 * Ech
        V_new = state.V + dt * F_ch
        V_sync = 0.5 * (state.V + V_new)
        state.V = V_new
        state.X = state.X + dt * state.V
        state.t += dt

        if state.t >= next_recenter - 1e-12:
            state.origin = state.X - 0.5 * box_L
            next_recenter += recenter_every
        if (step + 1) % record_every == 0 or step == n_steps - 1:
            rec["t"].append(state.t)
            rec["X1"].append(state.X[0])
            rec["V1"].append(V_sync[0])
            rec["F1"].append(F_ch[0])
            rec["wsum"].append(float(np.sum(state.w)))
        while snap_left and state.t >= snap_left[0] - 1e-12:
            snapshots.append((snap_left.pop(0), state.rho[:, :, grid_n // 2].copy()))
    for key in rec:
        rec[key] = np.array(rec[key])
    return rec, state, snapshots

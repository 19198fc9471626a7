import math

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss

from vstop.greens import ghat_resolvent
from vstop.profiles import Phi_hat, build_profile, empty_profile, phi_hat
from vstop.response import (
    force_steadystate,
    force_timedomain,
    solve_rho,
    source_hat,
    stopping_coefficient,
)


def _brute_source_real_space(profile, R, V, t, X_box):
    """S_R(t, x) on a box by s-quadrature of the closed-form Gaussian v-integral."""
    amp, w = profile.Phi_amplitude, profile.Phi_width
    gx, gw = leggauss(200)
    s_nodes = 0.5 * t * (gx + 1.0)
    s_wts = 0.5 * t * gw
    out = np.zeros(len(X_box))
    for s, ws in zip(s_nodes, s_wts):
        tau = t - s
        y = X_box - (np.array([-(R - s) * V, 0.0, 0.0]))[None, :]
        A = tau**2 / w**2 + 1.0
        b = (tau / w**2) * y
        y2 = np.einsum("ij,ij->i", y, y)
        b2 = np.einsum("ij,ij->i", b, b)
        yb = np.einsum("ij,ij->i", y, b)
        h = (amp / w**2) * A**-1.5 * np.exp(b2 / (2 * A) - y2 / (2 * w**2)) \
            * (yb / A - tau * (3.0 / A + b2 / A**2))
        out += ws * h
    return -profile.e0 * out


def test_source_trivial_cases(gauss):
    no_phi = build_profile({"mu.kind": "gaussian", "mu.sigma": 1.0, "Phi.amplitude": 0.0})
    assert source_hat(no_phi, 10.0, [6.0, 0, 0], 4.0, [1.0, 0.3, 0.0]) == 0.0
    assert source_hat(gauss, 10.0, [6.0, 0, 0], 0.0, [1.0, 0.3, 0.0]) == 0.0


def test_source_hat_vs_brute_force_dft(gauss):
    # eq:S_R on a 32^3 box, then one DFT mode; compare at lattice xi. The box
    # must cover the charge trail [-V t, 0] for the transform to be faithful.
    R = t = 2.0
    V = 6.0
    L, n = 32.0, 32
    corner = np.array([-20.0, -16.0, -16.0])
    ax = L / n * np.arange(n)
    XX, YY, ZZ = np.meshgrid(corner[0] + ax, corner[1] + ax, corner[2] + ax,
                             indexing="ij")
    box = np.stack([XX.ravel(), YY.ravel(), ZZ.ravel()], axis=1)
    S = _brute_source_real_space(gauss, R, V, t, box).reshape(n, n, n)
    S_hat = np.fft.fftn(S) * (L / n) ** 3
    k0 = 2 * math.pi / L
    cases = [(0, 1, 0), (0, 0, 2), (1, 1, 0), (2, 0, 1)]   # first two are xi perp V*
    for nx, ny, nz in cases:
        xi = k0 * np.array([nx, ny, nz])
        # fftn phases are relative to the box corner; shift to the origin
        want = S_hat[nx, ny, nz] * np.exp(-1j * (xi @ corner))
        got = source_hat(gauss, R, [V, 0, 0], t, xi)
        assert abs(got - want) <= 1e-2 * max(abs(want), 1e-3)


def test_source_translation_phase(gauss):
    xi = np.array([0.7, 0.2, -0.1])
    base = source_hat(gauss, 10.0, [6.0, 0, 0], 5.0, xi)
    shifted = source_hat(gauss, 10.0, [6.0, 0, 0], 5.0, xi, Xstar=[1.3, -0.4, 2.0])
    phase = np.exp(-1j * (xi @ np.array([1.3, -0.4, 2.0])))
    assert abs(shifted - base * phase) < 1e-12 * max(abs(base), 1e-30) + 1e-14


def test_solve_rho_trivial(gauss, empty):
    t = np.linspace(0.0, 5.0, 501)
    ms = solve_rho(gauss, lambda tt: 0.0, [1.0, 0, 0], t)
    assert np.all(ms.rhohat == 0.0)
    src = np.exp(-t) * (1 + 0.5j)
    ms2 = solve_rho(empty, src, [1.0, 0, 0], t)
    np.testing.assert_allclose(ms2.rhohat, src, atol=1e-14)
    assert ms2.rhohat[0] == ms2.shat[0]


def test_solve_rho_vs_greens_representation(bump):
    k = 0.9
    V = 6.0
    t = np.linspace(0.0, 30.0, 4001)
    dt = t[1] - t[0]
    xi = np.array([k * 0.35, k * math.sqrt(1 - 0.35**2), 0.0])
    S = np.array([source_hat(bump, 30.0, [V, 0, 0], tt, xi) for tt in t])
    ms = solve_rho(bump, S, xi, t)
    G = ghat_resolvent(bump, k, t)
    conv = dt * (np.convolve(G, S)[: len(t)])
    rho_rep = S + conv
    peak = np.abs(ms.rhohat).max()
    assert np.max(np.abs(ms.rhohat - rho_rep)) / peak < 1e-3


def test_force_signs_and_routes(bump):
    ss = force_steadystate(bump, [6.0, 0.0, 0.0])
    assert ss.force[0] < 0.0
    assert ss.A_est > 0.0
    assert abs(ss.force[1]) <= 1e-6 * abs(ss.force[0])
    assert abs(ss.force[2]) <= 1e-6 * abs(ss.force[0])
    td = force_timedomain(bump, 30.0, [6.0, 0.0, 0.0], n_k=24, n_y=48)
    assert td.plateau
    assert abs(td.force[0] - ss.force[0]) < 0.02 * abs(ss.force[0])


def test_force_empty_plasma(empty):
    res = force_steadystate(empty, [6.0, 0, 0])
    assert res.force[0] == 0.0 and res.A_est == 0.0


def test_force_mirror_symmetry(bump):
    f_plus = force_steadystate(bump, [8.0, 0.0, 0.0]).force
    f_minus = force_steadystate(bump, [-8.0, 0.0, 0.0]).force
    np.testing.assert_allclose(f_minus, -f_plus, rtol=1e-12)


def test_force_direction_covariance(bump):
    # force is parallel to V* for any orientation
    d = np.array([3.0, 4.0, 12.0]) / 13.0
    res = force_steadystate(bump, 8.0 * d)
    f_par = res.force @ d
    np.testing.assert_allclose(res.force, f_par * d, rtol=1e-12)
    assert f_par < 0


def test_linearity_in_source(bump):
    doubled = build_profile({"mu.kind": "truncated_bump", "mu.radius": 2.0,
                             "Phi.amplitude": 2.0})
    f1 = force_steadystate(bump, [8.0, 0, 0]).force[0]
    f2 = force_steadystate(doubled, [8.0, 0, 0]).force[0]
    assert f2 == pytest.approx(2.0 * f1, rel=1e-12)
    xi = np.array([0.5, 0.4, 0.0])
    s1 = source_hat(bump, 10.0, [8.0, 0, 0], 5.0, xi)
    s2 = source_hat(doubled, 10.0, [8.0, 0, 0], 5.0, xi)
    assert s2 == pytest.approx(2.0 * s1, rel=1e-12)


def test_e0_flip_covariance():
    plus = build_profile({"mu.kind": "truncated_bump", "mu.radius": 2.0, "e0": 1})
    minus = build_profile({"mu.kind": "truncated_bump", "mu.radius": 2.0, "e0": -1})
    xi = np.array([0.5, 0.4, 0.0])
    s_p = source_hat(plus, 10.0, [8.0, 0, 0], 5.0, xi)
    s_m = source_hat(minus, 10.0, [8.0, 0, 0], 5.0, xi)
    assert s_m == pytest.approx(-s_p, rel=1e-12)
    f_p = force_steadystate(plus, [8.0, 0, 0]).force[0]
    f_m = force_steadystate(minus, [8.0, 0, 0]).force[0]
    assert f_m == pytest.approx(f_p, rel=1e-12)   # quadratic in the coupling
    assert f_p < 0


def test_stopping_coefficient_route_tags(bump):
    ss = stopping_coefficient(bump, [8.0, 0, 0], route="steadystate")
    assert ss.route == "steadystate" and ss.A_est > 0
    td = stopping_coefficient(bump, [8.0, 0, 0], route="timedomain", n_k=16, n_y=32)
    assert td.route == "timedomain"
    with pytest.raises(ValueError):
        stopping_coefficient(bump, [8.0, 0, 0], route="bogus")


def test_force_requires_speed_above_support(bump):
    with pytest.raises(ValueError):
        force_steadystate(bump, [1.0, 0, 0])


def test_weighted_norm_monitor(bump):
    # || rho ||_Y <= C log^2(2+T) || S ||_Y on a sampled set, via the
    # per-mode response and the kinetics weighted norm
    from vstop.kinetics import ChargeTrajectory, linear_response_field, yt_norm
    from vstop.response import _rhohat_ladder

    T = R = 16.0
    V = 6.0
    n_k, n_u = 16, 32
    gk, gwk = leggauss(n_k)
    k = 0.5 * 8.0 * (gk + 1.0)
    wk = 0.5 * 8.0 * gwk
    gu, gwu = leggauss(n_u)
    u, wu = gu, gwu
    t_nodes = np.array([4.0, 8.0, 12.0, 16.0])
    rho_modes = np.empty((len(t_nodes), n_k, n_u), dtype=complex)
    S_modes = np.empty_like(rho_modes)
    for ik, kk in enumerate(k):
        dt = min(0.05, 0.2 / (kk * V), 0.0125 / max(kk, 0.4))
        dt = R / math.ceil(R / dt)
        y = -u * V
        # co-moving amplitudes: full modes carry an extra e^{i om (R-t)}
        W = _rhohat_ladder(bump, V, kk, y, t_nodes, dt)
        rho_modes[:, ik, :] = -bump.e0 * Phi_hat(bump, kk) * W
    for it, tt in enumerate(t_nodes):
        for ik, kk in enumerate(k):
            for iu, uu in enumerate(u):
                q = math.sqrt(max(1.0 - uu**2, 0.0))
                xi = np.array([kk * uu, kk * q, 0.0])
                om = kk * uu * V
                S_modes[it, ik, iu] = source_hat(bump, R, [V, 0, 0], tt, xi) \
                    * np.exp(-1j * om * (R - tt))

    from scipy.special import j0, j1

    def field_vals(modes, t_idx, pts):
        out_val = np.empty(len(pts))
        out_grad = np.empty((len(pts), 3))
        q = np.sqrt(np.maximum(1.0 - u**2, 0.0))
        base = (wk[:, None] * wu[None, :] * k[:, None] ** 2) / (2 * math.pi) ** 2
        for i, x in enumerate(pts):
            # charge-relative first coordinate (trajectory X1 = V t)
            x1_rel = x[0] - V * t_nodes[t_idx]
            xp = math.hypot(x[1], x[2])
            ph = np.exp(1j * k[:, None] * u[None, :] * x1_rel)
            b0 = j0(k[:, None] * q[None, :] * xp)
            b1 = j1(k[:, None] * q[None, :] * xp)
            common = base * modes[t_idx] * ph
            out_val[i] = np.sum(common * b0).real
            d1 = np.sum(common * (1j * k[:, None] * u[None, :]) * b0).real
            dp = -np.sum(common * k[:, None] * q[None, :] * b1).real
            if xp > 1e-12:
                out_grad[i] = [d1, dp * x[1] / xp, dp * x[2] / xp]
            else:
                out_grad[i] = [d1, 0.0, 0.0]
        return out_val, out_grad

    traj = ChargeTrajectory(T=T, V0=V)
    rng = np.random.default_rng(5)
    samples_rho, samples_S = [], []
    for it, tt in enumerate(t_nodes):
        pts = np.concatenate([
            tt * V * np.array([[1.0, 0, 0]]) + rng.normal(0, 3.0, (6, 3)),
            rng.normal(0, 6.0, (6, 3))])
        rv, rg = field_vals(rho_modes, it, pts)
        sv, sg = field_vals(S_modes, it, pts)
        for p, a, b in zip(pts, rv, rg):
            samples_rho.append((tt, p, a, b))
        for p, a, b in zip(pts, sv, sg):
            samples_S.append((tt, p, a, b))
    n_rho = yt_norm(samples_rho, traj, T)
    n_S = yt_norm(samples_S, traj, T)
    ratio = n_rho / (math.log(2.0 + T) ** 2 * n_S)
    assert np.isfinite(ratio) and ratio < 10.0

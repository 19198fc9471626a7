import math

import numpy as np
import pytest

from vstop.greens import (
    ContractionError,
    _g_radial,
    build_green_table,
    decay_report,
    g_pointwise,
    ghat_resolvent,
    ghat_spectral,
    volterra_kernel,
)
from vstop.profiles import mu_hat_line, phi_hat


def test_kernel_zero_time(gauss, bump):
    for prof in (gauss, bump):
        assert volterra_kernel(prof, 0.0, 1.3) == 0.0


def test_kernel_gaussian_value(gauss):
    # K(1, |xi|=1) = -phihat(1) * 1 * e^{-1/2}
    val = volterra_kernel(gauss, 1.0, np.array([1.0, 0.0, 0.0]))
    assert val == pytest.approx(-0.5 * math.exp(-0.5), rel=1e-12)


def test_kernel_empty(empty):
    assert volterra_kernel(empty, 2.0, 1.0) == 0.0


def test_kernel_reduction_vs_direct_quadrature(bump):
    # i xi . FT[grad mu](t xi) must equal -|xi|^2 t mu_hat(t |xi|); verify the
    # reduction against direct quadrature of the marginal representation
    from numpy.polynomial.legendre import leggauss

    from vstop.profiles import marginal_prime

    x, w = leggauss(800)
    u = 2.0 * x
    wu = 2.0 * w
    mp = marginal_prime(bump, u)
    for t, k in [(0.7, 1.3), (2.0, 0.5), (0.3, 4.0)]:
        # (d1 mu)^(p e1) = int e^{-i p u} m'(u) du; i xi . (grad mu)^(t xi) for
        # radial mu reduces to i k * that transform at p = t k
        p = t * k
        tr = np.sum(wu * np.exp(-1j * p * u) * mp)
        direct = (1j * k * tr).real * phi_hat(k)
        assert volterra_kernel(bump, t, k) == pytest.approx(direct, rel=1e-8)
        assert abs((1j * k * tr).imag) < 1e-10


def test_resolvent_zero_kernel(empty):
    t = np.linspace(0.0, 10.0, 101)
    G = ghat_resolvent(empty, 1.0, t)
    assert np.all(G == 0.0)


def test_resolvent_first_step(gauss):
    t = np.linspace(0.0, 1.0, 2001)
    dt = t[1] - t[0]
    G = ghat_resolvent(gauss, 1.0, t)
    K1 = volterra_kernel(gauss, dt, 1.0)
    assert G[1] == pytest.approx(K1, abs=5 * dt**2)
    assert G[0] == 0.0


def test_resolvent_contraction_abort(gauss):
    with pytest.raises(ContractionError):
        ghat_resolvent(gauss, 1.0, np.linspace(0.0, 10.0, 6))


def test_resolvent_identity(gauss):
    # substitute Ghat back into Ghat = K + K * Ghat with Simpson quadrature
    t = np.linspace(0.0, 20.0, 2001)
    dt = t[1] - t[0]
    k = 1.0
    G = ghat_resolvent(gauss, k, t)
    K = volterra_kernel(gauss, t, k)
    resid = 0.0
    for i in range(2, len(t), 40):
        n = i if i % 2 == 0 else i - 1
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= dt / 3.0
        conv = float(np.dot(w, K[: n + 1][::-1] * G[: n + 1]))
        resid = max(resid, abs(G[n] - K[n] - conv))
    assert resid <= 5.0 * dt**2 * 10.0


def test_two_route_equivalence_single_mode(gauss):
    t = np.linspace(0.0, 50.0, 5001)
    Gr = ghat_resolvent(gauss, 1.0, t)
    Gs = ghat_spectral(gauss, 1.0, t)
    peak = np.abs(Gs).max()
    assert np.max(np.abs(Gr - Gs)) / peak < 1e-3


def test_spectral_empty(empty):
    assert ghat_spectral(empty, 1.0, 3.0) == 0.0


def test_ghat_decay_in_xi(gauss):
    t = 2.0
    vals = [abs(ghat_spectral(gauss, k, t)) for k in (1.0, 4.0, 8.0, 16.0)]
    assert vals[-1] < 1e-6 * max(vals)


def test_ghat_real(gauss):
    # spectral values are real by construction; resolvent is real arithmetic
    val = ghat_spectral(gauss, 1.3, 2.2)
    assert isinstance(val, float)


def test_g_pointwise_empty(empty):
    assert g_pointwise(empty, 2.0, np.array([1.0, 0.0, 0.0])) == 0.0


def test_g_pointwise_matches_radial_grid(gauss):
    val = g_pointwise(gauss, 2.0, np.array([0.0, 3.0, 0.0]))
    grid = _g_radial(gauss, np.array([2.0]), np.array([3.0]))
    assert val == pytest.approx(float(grid[0, 0]), rel=1e-12)


def test_decay_report_empty(empty):
    rep = decay_report(empty, np.linspace(0.5, 5.0, 4), np.linspace(0.0, 5.0, 6))
    assert rep["sup_l1_weighted"] == 0.0
    assert rep["sup_pointwise_weighted"] == 0.0
    assert rep["sup_grad_weighted"] == 0.0


def test_build_table_routes_agree_small(bump):
    tab_r = build_green_table(bump, t_max=10.0, n_t=11, k_min=0.5, k_max=4.0,
                              n_k=8, route="resolvent")
    tab_s = build_green_table(bump, t_max=10.0, n_t=11, k_min=0.5, k_max=4.0,
                              n_k=8, route="spectral")
    peak = np.abs(tab_s.ghat).max()
    assert np.max(np.abs(tab_r.ghat - tab_s.ghat)) / peak < 1e-3

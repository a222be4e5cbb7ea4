import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from adlgap.errors import GeometryError
from adlgap.potential import ExtendedPhase, double_well, preset
from adlgap.quasimode import (C_REG, E_MINUS, E_PLUS, build_geometry, build_quasimode,
                              choose_geometry, continuity_jump, default_cutoffs, edge_margin,
                              gram_matrix, interaction_eigenvalues, laplace_norm,
                              normalization_Ch, primitive, rayleigh_quotient, residual_norms,
                              zeta, zeta_prime)
from adlgap.rates import eyring_kramers_rate, rate_g
from adlgap.wkb import build_ell

H = 1e-3


@pytest.fixture(scope="module")
def setup():
    V = preset("tilted_quartic")
    topo = double_well(V)
    ph = ExtendedPhase(V, 1.0, 1.0)
    eik = build_ell(ph, topo.s, toward=topo.m_hat.x)
    geo = choose_geometry(ph, topo, eik)
    qu = build_quasimode("m_under", topo, eik, geo, H, ph)
    qh = build_quasimode("m_hat", topo, eik, geo, H, ph)
    return ph, topo, eik, geo, qu, qh


def test_plateau_profile():
    r = np.linspace(-3, 3, 6001)
    z = zeta(r)
    assert np.all(z[np.abs(r) <= 1] == 1) and np.all(z[np.abs(r) >= 2] == 0)
    assert np.all((z >= 0) & (z <= 1))
    # C^1 with the stated derivative
    e = 1e-6
    mid = r[(np.abs(r) > 0.01)]
    np.testing.assert_allclose((zeta(mid + e) - zeta(mid - e)) / (2 * e), zeta_prime(mid), atol=1e-5)


def test_Ch_against_adaptive_quadrature():
    for tau, h in ((0.3, 0.1), (0.05, 1e-3), (0.2, 0.02)):
        ref = 0.5 * quad(lambda r: zeta(r / tau) * np.exp(-r * r / (2 * h)), -2 * tau, 2 * tau,
                         points=[-tau, tau], epsabs=0, epsrel=1e-13, limit=200)[0]
        assert normalization_Ch(tau, h) == pytest.approx(ref, rel=1e-11)
    assert normalization_Ch(0.3, 0.1, plateau=False) == pytest.approx(0.5 * np.sqrt(2 * np.pi * 0.1))


def test_Ch_tends_to_gaussian():
    tau = 0.3
    for h in (0.05, 0.02, 0.01):
        dev = abs(normalization_Ch(tau, h) * np.sqrt(2 / (np.pi * h)) - 1)
        assert dev <= np.exp(-tau ** 2 / (4 * h))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(1e-4, 0.5), st.floats(1.01, 3.0))
def test_Ch_increasing_in_tau(tau, h, k):
    # non-decreasing up to rounding once the Gaussian core saturates
    assert normalization_Ch(k * tau, h) >= normalization_Ch(tau, h) * (1 - 1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(0.02, 0.5), st.floats(1e-3, 0.2))
def test_primitive_properties(l, tau, h):
    Ch = normalization_Ch(tau, h)
    p = primitive(l, tau, h)
    assert primitive(-l, tau, h) == pytest.approx(-p, abs=1e-15)
    assert abs(p) <= Ch * (1 + 1e-12)
    if abs(l) >= 2 * tau:
        assert abs(p) == pytest.approx(Ch, rel=1e-12)
    e = 1e-7 * max(tau, 1e-3)
    d = (primitive(l + e, tau, h) - primitive(l - e, tau, h)) / (2 * e)
    assert d == pytest.approx(zeta(l / tau) * np.exp(-l * l / (2 * h)), abs=1e-5)


def test_geometry_regions(setup):
    ph, topo, eik, geo, qu, qh = setup
    assert geo.classify(ph, topo.s.x, 0.0, 0.0) == C_REG
    assert geo.classify(ph, topo.m_hat.x, 0.0, 0.0) == E_PLUS
    assert geo.classify(ph, topo.m_under.x, 0.0, 0.0) == E_MINUS
    assert edge_margin(geo, ph, eik) >= 1.05
    t0, d0 = default_cutoffs(topo, eik)
    assert geo.delta <= d0 and geo.tau <= t0
    with pytest.raises(GeometryError):
        build_geometry(ph, topo, eik, 5 * t0, 4 * d0)


def test_chi_values(setup):
    ph, topo, eik, geo, qu, qh = setup
    assert qh.chi(topo.m_hat.x, 0.0, 0.0) == 1.0
    assert qh.chi(topo.m_under.x, 0.0, 0.0) == -1.0
    assert qh(topo.m_under.x, 0.0, 0.0) == 0.0
    # deep in E+, psi = 2 theta e^{-(f - f(m_hat))/h}
    x = topo.m_hat.x + 0.01
    ref = 2 * qh.theta(x, 0.0, 0.0) * np.exp(-(ph.f(x, 0, 0) - topo.m_hat.value / 2) / H)
    assert qh(x, 0.0, 0.0) == pytest.approx(ref, rel=1e-14)
    # at the saddle only the h ell1 offset remains
    l_s = eik.ell(H)(np.zeros((3, 1)))[0]
    assert qh.chi(topo.s.x, 0.0, 0.0) == pytest.approx(primitive(l_s, geo.tau, H) / qh.Ch, abs=1e-14)
    assert abs(qh.chi(topo.s.x, 0.0, 0.0)) < 0.01
    assert continuity_jump(qh) < 1e-12


def test_norms_match_laplace(setup):
    ph, topo, eik, geo, qu, qh = setup
    assert qu.norm / laplace_norm(topo, "m_under", H) == pytest.approx(1.0, abs=0.01)
    assert qh.norm / laplace_norm(topo, "m_hat", H) == pytest.approx(1.0, abs=0.01)
    assert qh.integrals["rel_change"] <= 1e-3


def _box_grid(center, half, n):
    axes = [np.linspace(c - w, c + w, n) for c, w in zip(center, half)]
    X = np.meshgrid(*axes, indexing="ij")
    dV = np.prod([a[1] - a[0] for a in axes])
    return X, dV


def test_form_against_brute_force_grid(setup):
    """<P psi, psi> = gamma h^2 int g_v^2 e^{-2 f/h}; near the saddle on a plain grid,
    with g_v by central differences of the pointwise quasimode."""
    ph, topo, eik, geo, qu, qh = setup
    w = 9 * np.sqrt(H)
    (X, Vv, Y), dV = _box_grid((topo.s.x, 0.0, 0.0), (w, w * np.sqrt(2), w * np.sqrt(2)), 121)
    x, v, y = X.ravel(), Vv.ravel(), Y.ravel()
    g = lambda vv: qh.theta(x, vv, y) * (qh.chi(x, vv, y) + 1.0)
    e = 1e-6
    gv = (g(v + e) - g(v - e)) / (2 * e)
    weight = np.exp(-2 * (ph.f(x, v, y) - geo.f_s) / H)
    form_bf = ph.gamma * H ** 2 * np.sum(gv ** 2 * weight) * dV
    assert form_bf == pytest.approx(qh.integrals["form"], rel=2e-3)


def test_norm_against_brute_force_grid(setup):
    ph, topo, eik, geo, qu, qh = setup
    w = 9 * np.sqrt(H)
    cx = w / np.sqrt(topo.m_hat.hess_eigs[0] / 2)
    (X, Vv, Y), dV = _box_grid((topo.m_hat.x, 0.0, 0.0), (cx, w * np.sqrt(2), w * np.sqrt(2)), 81)
    psi = qh(X.ravel(), Vv.ravel(), Y.ravel())
    assert np.sum(psi ** 2) * dV == pytest.approx(qh.norm ** 2, rel=1e-3)


def test_gram_and_residuals(setup):
    ph, topo, eik, geo, qu, qh = setup
    G = gram_matrix(qu, qh)
    assert np.allclose(np.diag(G), 1.0, atol=1e-8)
    assert G[0, 1] == G[1, 0]
    assert abs(G[0, 1]) < 1e-30
    assert rayleigh_quotient(ph, qu) == 0.0
    assert residual_norms(qu) == {"form": 0.0, "P_norm2": 0.0, "Pstar_norm2": 0.0}
    rn = residual_norms(qh)
    lam = rayleigh_quotient(ph, qh)
    assert lam == pytest.approx(rn["form"])
    lam_ek = eyring_kramers_rate(topo, 1.0, H).lam
    assert abs(lam / lam_ek - 1) <= 10 * H
    # P psi small against the form, P^* psi of order sqrt(h lam)
    assert rn["P_norm2"] < 10 * H ** 2 * lam
    assert rn["Pstar_norm2"] / lam == pytest.approx(6.4 * H, rel=0.2)
    res = interaction_eigenvalues(G, rn["form"], rn, rate_g(H, 1.0, 1.0))
    np.testing.assert_allclose(res.eigenvalues, [0.0, lam])
    assert res.budget["relative_correction"] > 0

import json

import numpy as np
import pytest
import sympy as sy
from hypothesis import given, settings, strategies as st

from adlgap.errors import NearResonantError, TopologyError
from adlgap.potential import CriticalPoint, ExtendedPhase, double_well, preset, quartic
from adlgap.wkb import (EikonalData, HomogeneousPolynomial, build_ell, check_det_identity,
                        eval_residual_w, invariants, linear_field_operator, monomials,
                        scaled_residual_max, solve_hom_equation, solve_linear_eikonal,
                        taylor_residuals)


def _saddle_model(gamma, eta, nu=1.0):
    """V = x^4/4 - eta x^2/2 has a saddle at 0 with V'' = -eta."""
    V = quartic(0.25, 0.0, -eta / 2, 0.0, box=(-3 * np.sqrt(eta) - 2, 3 * np.sqrt(eta) + 2))
    s = CriticalPoint(x=0.0, index=1, hess_eigs=(-eta,), value=0.0, eta=eta)
    return ExtendedPhase(V, gamma, nu), s


def _tilted():
    V = preset("tilted_quartic")
    topo = double_well(V)
    ph = ExtendedPhase(V, 1.0, 1.0)
    return ph, topo, build_ell(ph, topo.s, toward=topo.m_hat.x)


def test_linear_eikonal_closed_forms():
    ph, s = _saddle_model(1.0, 2.0)
    xi, mu = solve_linear_eikonal(ph, s)
    assert mu == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(xi, [-2.0, 1.0, 0.0], atol=1e-15)
    assert xi @ ph.A @ xi == pytest.approx(mu, abs=1e-14)
    ph, s = _saddle_model(2.0, 3.0)
    xi, mu = solve_linear_eikonal(ph, s)
    np.testing.assert_allclose(xi, np.sqrt(0.5) * np.array([-3.0, 1.0, 0.0]), atol=1e-15)


def test_generic_lambda_eigenvector_dense_oracle():
    ph, s = _saddle_model(0.7, 1.3)
    d = build_ell(ph, s)
    ev, U = np.linalg.eig(d.Lam)
    neg = ev.real < 0
    assert neg.sum() == 1
    assert ev[neg][0].real == pytest.approx(-d.mu, rel=1e-12)
    assert np.linalg.norm(d.Lam @ d.xi + d.mu * d.xi) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_invariants_hold_for_random_saddles(gamma, eta):
    ph, s = _saddle_model(gamma, eta)
    d = build_ell(ph, s)
    inv = invariants(d)
    assert inv["lam_xi"] < 1e-10
    assert inv["A_xi_xi"] < 1e-12 * max(1.0, d.mu)
    assert inv["Hinv_xi_xi"] < 1e-10
    assert inv["ups_min_re"] >= -1e-12
    assert check_det_identity(d) < 1e-10


def test_hom_equation_trivial_cases():
    Ups = np.array([[0.5, 1.0, 0.0], [-2.0, 1.0, 0.0], [0.0, 0.3, 0.7]])
    zero = HomogeneousPolynomial(2, {})
    assert np.all(solve_hom_equation(Ups, 1.3, zero).vector() == 0)
    R = HomogeneousPolynomial(2, {(2, 0, 0): 1.0, (0, 1, 1): -2.0})
    p = solve_hom_equation(np.zeros((3, 3)), 2.0, R)
    np.testing.assert_allclose(p.vector(), -R.vector() / 2.0)


def test_hom_equation_substitution_residual():
    ph, s = _saddle_model(1.0, 2.0)
    d = build_ell(ph, s)
    R = HomogeneousPolynomial(3, {(2, 1, 0): 1.0})       # x^2 v
    p = solve_hom_equation(d.Ups, d.mu, R)
    # apply the operator by symbolic differentiation, independent of the matrix
    x, v, y = sy.symbols("x v y")
    X = sy.Matrix([x, v, y])
    P = sum(a * x**e[0] * v**e[1] * y**e[2] for e, a in p.coeffs.items())
    field = sy.Matrix(d.Ups.tolist()) * X
    res = sy.expand(sum(field[i] * sy.diff(P, X[i]) for i in range(3)) + d.mu * P + x**2 * v)
    coeffs = sy.Poly(res, x, v, y).coeffs() if res != 0 else [0]
    assert max(abs(float(c)) for c in coeffs) < 1e-12


def test_near_resonance_detected():
    Ups = -0.5 * np.eye(3)          # X.grad on degree 2 gives -1, cancelling mu = 1
    with pytest.raises(NearResonantError):
        solve_hom_equation(Ups, 1.0, HomogeneousPolynomial(2, {(2, 0, 0): 1.0}))
    assert linear_field_operator(Ups, 1.0, 2).shape == (len(monomials(2)),) * 2


def test_linear_piece_and_flip():
    ph, topo, d = _tilted()
    np.testing.assert_allclose(d.ell0.grad()[0](np.zeros((3, 1))), d.xi[0])
    f = d.flipped()
    for k, p in d.pieces.items():
        np.testing.assert_array_equal(f.pieces[k].vector(), -p.vector())
    assert f.orientation == -d.orientation
    # m_hat lies on the positive side of xi
    assert d.xi[0] * (topo.m_hat.x - topo.s.x) > 0


def test_zero_ell_gives_zero_residual():
    ph, topo, d = _tilted()
    z = EikonalData(**{**d.__dict__, "pieces": {k: HomogeneousPolynomial(p.degree, {})
                                                for k, p in d.pieces.items()}})
    X = np.random.default_rng(1).normal(size=(3, 50))
    assert np.all(eval_residual_w(z, ph, X, 0.1) == 0)


def _sympy_w(d, ph, Vcoeffs):
    """w(X, h) built symbolically from its definition."""
    u, v, y, h = sy.symbols("u v y h")
    a, b, c, e = [sy.nsimplify(t) for t in Vcoeffs]
    x = u + sy.Float(d.s, 30)
    dV = 4 * a * x**3 + 3 * b * x**2 + 2 * c * x + e
    g, nu = sy.nsimplify(ph.gamma), sy.nsimplify(ph.nu)
    ell = 0
    for k, p in d.pieces.items():
        coef = h if k.startswith("l1") else 1
        ell += coef * sum(sy.Float(cf, 30) * u**m[0] * v**m[1] * y**m[2] for m, cf in p.coeffs.items())
    field = [v, -dV - nu * y * v + g * v, nu * v**2 - h * nu]
    X = [u, v, y]
    w = sum(field[i] * sy.diff(ell, X[i]) for i in range(3))
    w += g * ell * sy.diff(ell, v) ** 2 - h * g * sy.diff(ell, v, 2)
    return sy.expand(w), (u, v, y, h)


def test_symbolic_taylor_oracle():
    ph, topo, d = _tilted()
    w, (u, v, y, h) = _sympy_w(d, ph, ph.V.coeffs)
    P = sy.Poly(w, u, v, y, h)
    worst0, worst1, scale = 0.0, 0.0, 0.0
    for mon, cf in zip(P.monoms(), P.coeffs()):
        deg, ph_ = sum(mon[:3]), mon[3]
        scale = max(scale, abs(float(cf)))
        if ph_ == 0 and deg <= 3:
            worst0 = max(worst0, abs(float(cf)))
        if ph_ == 1 and deg <= 1:
            worst1 = max(worst1, abs(float(cf)))
    assert worst0 / scale < 1e-9
    assert worst1 / scale < 1e-9
    t0, t1 = taylor_residuals(d, ph)
    assert t0 < 1e-9 and t1 < 1e-9


@pytest.mark.parametrize("name", ["tilted_quartic", "figure1"])
def test_scaled_residual_is_order_h2(name):
    V = preset(name)
    topo = double_well(V)
    ph = ExtendedPhase(V, 1.0, 1.0)
    d = build_ell(ph, topo.s, toward=topo.m_hat.x)
    vals = [scaled_residual_max(d, ph, h) for h in (1e-1, 3e-2, 1e-2)]
    assert max(vals) / min(vals) < 2.0
    at_s = [abs(eval_residual_w(d, ph, np.array([[topo.s.x], [0.0], [0.0]]), h)[0]) / h**2
            for h in (1e-1, 3e-2, 1e-2)]
    assert max(at_s) / min(at_s) < 1.2


def test_determinant_identity_and_projector_rank():
    for name in ("tilted_quartic", "figure1"):
        V = preset(name)
        topo = double_well(V)
        d = build_ell(ExtendedPhase(V, 1.0, 1.0), topo.s, toward=topo.m_hat.x)
        assert np.linalg.matrix_rank(d.Pi_xi) == 1
        assert np.linalg.eigvalsh(d.H + d.Pi_xi).min() > 0
        assert check_det_identity(d) < 1e-10
    ph, s = _saddle_model(1.0, 2.0)
    assert check_det_identity(build_ell(ph, s)) < 1e-10


def test_det_identity_rejects_non_positive():
    ph, topo, d = _tilted()
    bad = EikonalData(**{**d.__dict__, "Pi_xi": 0 * d.Pi_xi})
    with pytest.raises(TopologyError):
        check_det_identity(bad)


def test_json_round_trip():
    ph, topo, d = _tilted()
    d2 = EikonalData.from_dict(json.loads(d.to_json()))
    X = np.random.default_rng(0).normal(size=(3, 20)) * 0.2
    np.testing.assert_array_equal(eval_residual_w(d, ph, X, 0.05), eval_residual_w(d2, ph, X, 0.05))


def test_saddle_validation():
    ph, topo, d = _tilted()
    with pytest.raises(TopologyError):
        solve_linear_eikonal(ph, topo.m_hat)

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from adlgap.errors import DomainTooSmallError, ParameterError
from adlgap.operator import (assemble, build_basis, hermite_factors, kron3, lemma23_residual,
                             product_identities, read_coo, structure_checks, witten_consistency,
                             write_coo)
from adlgap.potential import ExtendedPhase, double_well, preset, quartic


@pytest.fixture(scope="module")
def tilted():
    V = preset("tilted_quartic")
    topo = double_well(V)
    ph = ExtendedPhase(V, 1.0, 1.0)
    asm = assemble(ph, build_basis(V, 0.1, topo=topo, Nx=65, Nv=8, Ny=8))
    return V, topo, ph, asm


def test_size_arithmetic_and_domain_check():
    V = preset("tilted_quartic")
    assert build_basis(V, 0.1, L=2.5, Nx=129, Nv=16, Ny=16).N == 33024
    with pytest.raises(DomainTooSmallError):
        build_basis(preset("symmetric_quartic"), 0.1, L=1.0)
    with pytest.raises(ParameterError):
        build_basis(V, -0.1)
    with pytest.raises(ParameterError):
        build_basis(V, 0.1, Nv=2)


@settings(max_examples=50, deadline=None)
@given(st.integers(9, 40), st.integers(4, 12), st.integers(4, 12), st.data())
def test_index_round_trip(Nx, Nv, Ny, data):
    b = build_basis(preset("tilted_quartic"), 0.2, L=3.0, Nx=Nx, Nv=Nv, Ny=Ny, check=False)
    k = data.draw(st.integers(0, b.N - 1))
    assert b.flat(*b.tensor(k)) == k
    ks = np.arange(b.N)
    np.testing.assert_array_equal(b.flat(*b.tensor(ks)), ks)


def test_O_diagonal_and_projector(tilted):
    V, topo, ph, asm = tilted
    b = asm.basis
    _, iv, _ = b.tensor(np.arange(b.N))
    np.testing.assert_allclose(asm.O.diagonal(), asm.h * iv, atol=1e-15)
    e0 = np.zeros((b.Nv, b.Nv))
    e0[0, 0] = 1.0
    ref = kron3(sp.identity(b.Nx), sp.csr_matrix(e0), sp.identity(b.Ny))
    assert sp.linalg.norm(asm.Pi - ref) == 0


def test_v_moments_on_ground_state():
    V = preset("tilted_quartic")
    topo = double_well(V)
    ph = ExtendedPhase(V, 1.0, 1.0)
    scaled = []
    for h in (0.2, 0.1, 0.05):
        a = assemble(ph, build_basis(V, h, topo=topo, Nx=33, Nv=8, Ny=4))
        b = a.basis
        v = kron3(sp.identity(b.Nx), a.vf["q"], sp.identity(b.Ny))
        assert sp.linalg.norm(a.Pi @ v @ a.Pi) < 1e-12
        scaled.append(np.linalg.norm((v @ a.Pi).toarray(), 2) / np.sqrt(h))
    np.testing.assert_allclose(scaled, scaled[0], rtol=1e-12)


def test_kernel_vector(tilted):
    V, topo, ph, asm = tilted
    k = asm.kernel
    assert k @ (asm.Pi @ k) / (k @ k) == pytest.approx(1.0, abs=1e-15)
    assert np.linalg.norm(asm.O @ k) < 1e-15
    assert asm.kernel_residual() <= 1e-6
    # e^{-f/h} solves P k = 0 exactly for the staggered scheme, at any resolution
    for Nx in (33, 129):
        a = assemble(ph, build_basis(V, 0.1, topo=topo, Nx=Nx, Nv=6, Ny=4))
        assert a.kernel_residual() < 1e-13


def test_structure_checks(tilted):
    r = structure_checks(tilted[3])
    for key in ("P_split", "Pi_idem", "Pi_sym", "O_Pi", "PiZPi", "H0_skew", "Y_skew", "O_factored"):
        assert r[key] < 1e-12, key


@pytest.mark.parametrize("name,gamma,nu", [("tilted_quartic", 1.0, 1.0), ("figure1", 0.5, 2.0)])
def test_hypocoercive_identities(name, gamma, nu):
    V = preset(name)
    ph = ExtendedPhase(V, gamma, nu)
    asm = assemble(ph, build_basis(V, 0.1, topo=double_well(V), Nx=33, Nv=8, Ny=8))
    assert lemma23_residual(asm) < 1e-8
    assert max(product_identities(asm).values()) < 1e-8


def test_B_is_positive_semidefinite(tilted):
    B = tilted[3].B.toarray()
    assert np.allclose(B, B.T)
    assert np.linalg.eigvalsh(B).min() > -1e-10


def test_witten_direct_form_is_second_order():
    V = preset("tilted_quartic")
    topo = double_well(V)
    ph = ExtendedPhase(V, 1.0, 1.0)
    errs = [witten_consistency(assemble(ph, build_basis(V, 0.1, topo=topo, Nx=n, Nv=4, Ny=4)),
                               V, topo.m_hat.x) for n in (65, 129, 257)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.7)


def test_hermite_factors_against_dense_quadrature():
    # <phi_i, v phi_j> for the Gaussian weight of variance h, by Gauss-Hermite quadrature
    h, n = 0.3, 6
    f = hermite_factors(n, h)
    t, w = np.polynomial.hermite_e.hermegauss(40)
    v = np.sqrt(h) * t
    from math import factorial
    phis = np.array([np.polynomial.hermite_e.hermeval(t, np.eye(n)[k]) / np.sqrt(factorial(k))
                     for k in range(n)])
    W = w / np.sqrt(2 * np.pi)
    Q = (phis * W) @ (phis * v).T
    np.testing.assert_allclose(f["q"].toarray(), Q, atol=1e-12)


def test_coo_round_trip(tmp_path, tilted):
    M = tilted[3].P
    write_coo(tmp_path / "P.coo", M)
    M2 = read_coo(tmp_path / "P.coo")
    assert sp.linalg.norm(M - M2) == 0


def test_single_well_has_one_kernel():
    V = quartic(0.0, 0.0, 0.5, 0.0, box=(-3, 3))
    b = build_basis(V, 0.1, Nx=33, Nv=6, Ny=6)
    a = assemble(ExtendedPhase(V, 1.0, 1.0), b)
    assert a.kernel_residual() < 1e-13

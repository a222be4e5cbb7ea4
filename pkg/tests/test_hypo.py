import csv

import numpy as np
import pytest
import scipy.linalg as sla

from adlgap.errors import ConditioningError, GeometryError
from adlgap.hypo import (CSV_COLUMNS, build_A, coercivity_functional, default_alpha, minor_AZPi,
                         projector_identities, remainder_bounds, rough_quasimodes, rough_residuals,
                         write_diagnostics_csv)
from adlgap.operator import assemble, build_basis
from adlgap.potential import ExtendedPhase, double_well, preset

HS = (0.2, 0.1, 0.05)


def _point(h, Nx=25, Nv=6, Ny=6):
    V = preset("tilted_quartic")
    topo = double_well(V)
    asm = assemble(ExtendedPhase(V, 1.0, 1.0), build_basis(V, h, topo=topo, Nx=Nx, Nv=Nv, Ny=Ny))
    return topo, asm, build_A(asm)


@pytest.fixture(scope="module")
def sweep():
    out = []
    for h in HS:
        topo, asm, A = _point(h)
        F = rough_quasimodes(asm, topo)
        out.append((topo, asm, A, F, coercivity_functional(asm, A, F, n_trials=1000, seed=0)))
    return out


def test_A_against_dense_definition():
    topo, asm, A = _point(0.1)
    Z = asm.Z.toarray()
    Pi = asm.Pi.toarray()
    ZP = Z @ Pi
    h, al = asm.h, A.alpha
    ref = sla.solve(h * al * np.eye(asm.N) + ZP.T @ ZP / h, ZP.T)
    got = A.matrix(asm.E).toarray()
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-10
    assert A.formula_residual < 1e-9
    assert A.diagnostics["rows_outside_RanPi"] < 1e-10 * np.linalg.norm(ref)


def test_A_bound_and_projectors(sweep):
    for topo, asm, A, F, co in sweep:
        assert A.alpha == default_alpha(asm.h, 1.0)
        assert A.norm <= 1 / np.sqrt(A.alpha)
        assert max(projector_identities(asm, A).values()) < 1e-10
        # A vanishes on Ran Pi
        u = asm.Pi @ np.random.default_rng(0).normal(size=asm.N)
        assert np.linalg.norm(A.matrix(asm.E) @ u) < 1e-12 * np.linalg.norm(u)


def test_conditioning_error():
    topo, asm, _ = _point(0.1)
    with pytest.raises(ConditioningError):
        build_A(asm, cond_max=1.0)


def test_rough_quasimodes(sweep):
    for topo, asm, A, F, co in sweep:
        Q = F.vectors
        assert Q[:, 0] @ Q[:, 1] == 0.0
        np.testing.assert_allclose(np.linalg.norm(Q, axis=0), 1.0, atol=1e-10)
    with pytest.raises(GeometryError):
        rough_quasimodes(sweep[0][1], sweep[0][0], r=5.0)


def test_rough_residual_decay_at_least_cm(sweep):
    # log ||P f_m|| falls with 1/h at least as fast as c_m predicts
    for name in ("m_under", "m_hat"):
        logs = [np.log(rough_residuals(asm, F)[name]) for _, asm, _, F, _ in sweep]
        slope = np.polyfit(1 / np.array(HS), logs, 1)[0]
        assert slope <= -sweep[0][3].c_m[name]


def test_coercivity_sweep(sweep):
    ratios = []
    for topo, asm, A, F, co in sweep:
        assert co.minimum > 0
        assert co.min_exact <= co.min_random + 1e-14
        assert co.min_exact <= min(co.min_structured.values()) + 1e-14
        h = asm.h
        assert co.min_structured["one_minus_Pi"] >= 0.5 * asm.gamma * h
        ratios.append(co.ratio)
    assert max(ratios) / min(ratios) <= 2.0


def test_minor_and_remainders_bounded(sweep):
    minors, consts = [], []
    for topo, asm, A, F, co in sweep:
        minors.append(minor_AZPi(asm, A, F) / asm.h)
        consts.append(remainder_bounds(asm, A))
    assert min(minors) > 0 and max(minors) / min(minors) < 2
    for k in ("C_AZ", "C_AO", "C_ZtA"):
        vals = [c[k] for c in consts]
        assert max(vals) / min(vals) < 2, k


def test_seeded_trials_reproducible():
    topo, asm, A = _point(0.2)
    F = rough_quasimodes(asm, topo)
    a = coercivity_functional(asm, A, F, n_trials=50, seed=3, exact=False)
    b = coercivity_functional(asm, A, F, n_trials=50, seed=3, exact=False)
    da, db = a.to_dict(), b.to_dict()
    assert da.keys() == db.keys()
    for k in da:
        np.testing.assert_equal(da[k], db[k])


def test_diagnostics_csv(tmp_path, sweep):
    rows = [{"h": asm.h, "gamma": 1.0, "nu": 1.0, "alpha": A.alpha, "norm_A": A.norm,
             "coercivity_min": co.minimum, "g_h": co.g_h, "ratio": co.ratio}
            for _, asm, A, _, co in sweep]
    write_diagnostics_csv(tmp_path / "d.csv", rows)
    with open(tmp_path / "d.csv") as fh:
        got = list(csv.reader(fh))
    assert tuple(got[0]) == CSV_COLUMNS and len(got) == 1 + len(HS)

"""Hypocoercive machinery on the discretized space.

A = (h alpha + h^{-1} (Z Pi)^T (Z Pi))^{-1} (Z Pi)^T is supported on rows in Ran Pi
(v ground state) and on columns with v-mode 1 or 2, so it is stored as the dense
block A_r with A = E A_r restricted to those columns.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConditioningError, GeometryError
from .operator import OperatorAssembly
from .potential import DoubleWellTopology
from .rates import rate_g


def default_alpha(h: float, nu: float) -> float:
    return min(1.0, nu * nu * h)


def _active_columns(asm: OperatorAssembly) -> np.ndarray:
    """Columns j with (Pi Z^T)[:, j] possibly nonzero: v-mode 1 or 2."""
    b = asm.basis
    idx = np.arange(b.N).reshape(b.Nx, b.Nv, b.Ny)
    return np.sort(idx[:, 1:3, :].ravel())


@dataclass
class AuxOperator:
    alpha: float
    h: float
    cols: np.ndarray = field(repr=False)     # active columns
    Ar: np.ndarray = field(repr=False)       # (Nx*Ny, len(cols)) block in Ran Pi coordinates
    N: int = 0
    norm: float = float("nan")
    formula_residual: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    def full_rows(self) -> np.ndarray:
        """A_r extended to all N columns (dense Nx*Ny x N)."""
        out = np.zeros((self.Ar.shape[0], self.N))
        out[:, self.cols] = self.Ar
        return out

    def matrix(self, E) -> sp.csr_matrix:
        """A as a sparse N x N matrix."""
        return (E @ sp.csr_matrix(self.full_rows())).tocsr()

    def to_dict(self):
        return {"alpha": self.alpha, "h": self.h, "norm": self.norm,
                "formula_residual": self.formula_residual, **self.diagnostics}


def build_A(asm: OperatorAssembly, alpha: float | None = None, cond_max: float = 1e12) -> AuxOperator:
    """A by the defining formula (full sparse solve) and by the reduced form
    E (h alpha + B)^{-1} (Z E)^T. Both are computed independently and compared."""
    h = asm.h
    alpha = default_alpha(h, asm.nu) if alpha is None else alpha
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    N = asm.N
    Z, Pi, E = asm.Z, asm.Pi, asm.E
    cols = _active_columns(asm)
    ZPi = (Z @ Pi).tocsr()
    PiZt = ZPi.T.tocsr()
    # formula 1 on the full space
    M1 = (h * alpha * sp.identity(N) + (ZPi.T @ ZPi) / h).tocsc()
    try:
        lu = spla.splu(M1)
    except RuntimeError as exc:
        raise ConditioningError(f"defining operator of A is singular: {exc}") from exc
    rhs = PiZt[:, cols].toarray()
    A1 = lu.solve(rhs)
    A1r = E.T @ A1
    # formula 2 on the (x, y) space
    M2 = (h * alpha * sp.identity(asm.B.shape[0]) + asm.B).toarray()
    ev = np.linalg.eigvalsh(M2)
    cond = ev[-1] / ev[0]
    if not (ev[0] > 0 and cond < cond_max):
        raise ConditioningError(f"h alpha + B has condition number {cond:.3e}")
    A2r = sla.solve(M2, (E.T @ Z.T)[:, cols].toarray(), assume_a="pos")
    res = float(np.linalg.norm(A1r - A2r) / max(np.linalg.norm(A2r), 1e-300))
    # rows of A1 outside Ran Pi must vanish
    off = float(np.linalg.norm(A1 - E @ A1r))
    nrm = float(np.linalg.norm(A2r, 2))
    return AuxOperator(alpha=alpha, h=h, cols=cols, Ar=A2r, N=N, norm=nrm,
                       formula_residual=res,
                       diagnostics={"condition": float(cond), "rows_outside_RanPi": off,
                                    "norm_bound": 1.0 / np.sqrt(alpha)})


def projector_identities(asm: OperatorAssembly, A: AuxOperator) -> dict:
    """||Pi A - A||, ||A Pi|| and ||A (1 - Pi) - A||, relative to ||A||."""
    Af = A.matrix(asm.E)
    Pi = asm.Pi
    scale = max(A.norm, 1e-300)
    return {
        "PiA_minus_A": float(spla.norm(Pi @ Af - Af)) / scale,
        "A_Pi": float(spla.norm(Af @ Pi)) / scale,
        "A_1mPi_minus_A": float(spla.norm(Af - Af @ Pi - Af)) / scale,
    }


# -- rough quasimodes -------------------------------------------------------------

def _bump(t):
    """1 on |t| <= 1/2, 0 on |t| >= 1, quintic smoothstep in between."""
    a = np.clip((1.0 - np.abs(t)) / 0.5, 0.0, 1.0)
    return a ** 3 * (10 - 15 * a + 6 * a * a)


@dataclass
class RoughQuasimodeSpace:
    vectors: np.ndarray          # N x 2, columns f_under, f_hat
    r: float
    minima: tuple
    c_m: dict
    h: float

    @property
    def F(self):
        return self.vectors

    def project_out(self, U):
        """Orthogonal projection of the columns of U onto F_h^perp."""
        Q = self.vectors
        return U - Q @ (Q.T @ U)

    def to_dict(self):
        return {"r": self.r, "c_m": self.c_m, "h": self.h, "minima": list(self.minima)}


def rough_quasimodes(asm: OperatorAssembly, topo: DoubleWellTopology,
                     r: float | None = None) -> RoughQuasimodeSpace:
    """f_m = chi_m(x) e^{-(f - f(m))/h} on the nodes times the v, y ground states,
    normalized. chi_m is a plateau bump on B(m, r) with its transition on
    r/2 <= |x - m| <= r. Default r is 0.9 min_m |m - s|.

    c_m = min over the transition annulus of (V - V(m))/2, the predicted decay
    rate of ||P f_m|| in 1/h.
    """
    b = asm.basis
    h = asm.h
    V = asm.potential
    x = b.x
    ms = (topo.m_under, topo.m_hat)
    dist = min(abs(m.x - topo.s.x) for m in ms)
    if r is None:
        r = 0.9 * dist
    if not 0 < r < dist or abs(ms[0].x - ms[1].x) < 2 * r:
        raise GeometryError("cutoff balls overlap or contain the saddle")
    ev = np.zeros(b.Nv)
    ev[0] = 1.0
    ey = np.zeros(b.Ny)
    ey[0] = 1.0
    cols, cm = [], {}
    for name, m in zip(("m_under", "m_hat"), ms):
        g = _bump((x - m.x) / r) * np.exp(-(V(x) - m.value) / (2 * h))
        vec = np.kron(np.kron(g, ev), ey)
        cols.append(vec / np.linalg.norm(vec))
        xa = np.linspace(m.x - r, m.x + r, 4001)
        xa = xa[np.abs(xa - m.x) >= r / 2]
        cm[name] = float(np.min(V(xa) - m.value) / 2)
    return RoughQuasimodeSpace(vectors=np.column_stack(cols), r=r, minima=(ms[0].x, ms[1].x),
                               c_m=cm, h=h)


def rough_residuals(asm: OperatorAssembly, F: RoughQuasimodeSpace) -> dict:
    """||P f_m|| for both rough quasimodes."""
    out = {}
    for j, name in enumerate(("m_under", "m_hat")):
        out[name] = float(np.linalg.norm(asm.P @ F.vectors[:, j]))
    return out


# -- coercivity ---------------------------------------------------------------

def _sym_form(asm: OperatorAssembly, A: AuxOperator, delta: float) -> np.ndarray:
    """Dense symmetric matrix of u -> Re<P u, (1 + delta (A + A^T)) u>."""
    P = asm.P.toarray()
    Af = asm.E @ sp.csr_matrix(A.full_rows())
    Af = Af.toarray()
    Q = np.eye(asm.N) + delta * (Af + Af.T)
    M = Q.T @ P
    return 0.5 * (M + M.T)


@dataclass
class CoercivityResult:
    h: float
    alpha: float
    delta: float
    g_h: float
    min_random: float
    min_structured: dict
    min_exact: float
    minimum: float
    ratio: float
    n_trials: int

    def to_dict(self):
        return dict(self.__dict__)


def coercivity_functional(asm: OperatorAssembly, A: AuxOperator, F: RoughQuasimodeSpace,
                          delta0: float = 0.1, n_trials: int = 1000, seed: int = 0,
                          exact: bool = True) -> CoercivityResult:
    """min over trial vectors u in F_h^perp of Re<P u, (1 + delta(h)(A + A^T)) u>/||u||^2,
    with delta(h) = delta0 g(h)/h.

    Candidates: n_trials Gaussian vectors, the (1 - Pi)-pure and Pi-pure parts of
    extra Gaussian vectors, the low eigenvectors of B lifted to Ran Pi, and (if
    exact) the minimizer itself. The form is a symmetric quadratic form, so its
    minimum over F_h^perp is the smallest eigenvalue of the compressed matrix.
    """
    h, g, nu = asm.h, asm.gamma, asm.nu
    gh = rate_g(h, g, nu)
    delta = delta0 * gh / h
    M = _sym_form(asm, A, delta)
    N = asm.N
    rng = np.random.default_rng(seed)

    def ratios(U):
        U = F.project_out(U)
        nu2 = np.einsum("ij,ij->j", U, U)
        keep = nu2 > 1e-24
        U = U[:, keep]
        return np.einsum("ij,ij->j", U, M @ U) / nu2[keep]

    r_rand = ratios(rng.normal(size=(N, n_trials)))
    piv = asm.Pi.diagonal() > 0.5
    W = rng.normal(size=(N, 64))
    Wpi, Wperp = W * piv[:, None], W * (~piv)[:, None]
    k = min(8, asm.B.shape[0] - 2)
    wB, UB = sla.eigh(asm.B.toarray(), subset_by_index=[0, k - 1])
    r_struct = {
        "one_minus_Pi": float(ratios(Wperp).min()),
        "Pi": float(ratios(Wpi).min()),
        "witten_modes": float(ratios(asm.E @ UB).min()),
    }
    mn_exact = float("nan")
    if exact:
        Qf = F.vectors
        R = np.eye(N) - Qf @ Qf.T
        big = 10.0 * (np.abs(M).sum(axis=1).max() + 1.0)
        ev = sla.eigh(R @ M @ R + big * (Qf @ Qf.T), eigvals_only=True, subset_by_index=[0, 0])
        mn_exact = float(ev[0])
    cands = [float(r_rand.min()), *r_struct.values()]
    if exact:
        cands.append(mn_exact)
    mn = min(cands)
    return CoercivityResult(h=h, alpha=A.alpha, delta=delta, g_h=gh, min_random=float(r_rand.min()),
                            min_structured=r_struct, min_exact=mn_exact, minimum=mn,
                            ratio=mn / gh, n_trials=n_trials)


def minor_AZPi(asm: OperatorAssembly, A: AuxOperator, F: RoughQuasimodeSpace) -> float:
    """Smallest eigenvalue of the symmetric part of A Z Pi on Ran Pi, orthogonal to F_h."""
    E = asm.E
    M = A.full_rows() @ (asm.Z @ E).toarray()
    M = 0.5 * (M + M.T)
    Fr = E.T @ F.vectors
    Qf, _ = np.linalg.qr(Fr)
    R = np.eye(M.shape[0]) - Qf @ Qf.T
    big = 10.0 * (np.abs(M).sum(axis=1).max() + 1.0)
    return float(sla.eigh(R @ M @ R + big * (Qf @ Qf.T), eigvals_only=True,
                          subset_by_index=[0, 0])[0])


def remainder_bounds(asm: OperatorAssembly, A: AuxOperator) -> dict:
    """Operator norms of the three remainder terms and their scaled constants:
    ||Pi A Z (1-Pi)||/h, ||Pi A O (1-Pi)||/(alpha^{-1/2} h), ||(1-Pi)(Pi Z)^T A (1-Pi)||/h."""
    h, al = asm.h, A.alpha
    E = asm.E
    Ar = A.full_rows()
    notPi = sp.identity(asm.N) - asm.Pi
    n1 = float(np.linalg.norm((sp.csr_matrix(Ar) @ asm.Z @ notPi).toarray(), 2))
    n2 = float(np.linalg.norm((sp.csr_matrix(Ar) @ asm.O @ notPi).toarray(), 2))
    Lm = (notPi @ asm.Z.T @ E).toarray()
    Rm = (sp.csr_matrix(Ar) @ notPi).toarray()
    _, RL = np.linalg.qr(Lm)
    n3 = float(np.linalg.norm(RL @ Rm, 2))
    return {"AZ": n1, "AO": n2, "ZtA": n3,
            "C_AZ": n1 / h, "C_AO": n2 / (h / np.sqrt(al)), "C_ZtA": n3 / h}


CSV_COLUMNS = ("h", "gamma", "nu", "alpha", "norm_A", "coercivity_min", "g_h", "ratio")


def write_diagnostics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)

"""Local WKB phase at the saddle.

The phase is ell = ell0 + h*ell1 in local coordinates X - s, with
ell0 = xi.X + ell02 + ell03 and ell1 = ell10 + ell11, solved degree by degree
from the eikonal (w0) and transport (w1) equations using homogeneous
polynomials and the operator L = Ups X.grad + mu.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.linalg as sla

from .errors import NearResonantError, TopologyError
from .potential import CriticalPoint, ExtendedPhase
from .rates import mu_of_saddle

NVAR = 3  # (x, v, y) for d = 1


def monomials(j: int, n: int = NVAR) -> list:
    """Exponent tuples of total degree j in graded lexicographic order."""
    out = [a for a in product(range(j + 1), repeat=n) if sum(a) == j]
    return sorted(out, reverse=True)


class Poly:
    """Dense polynomial in 3 variables truncated at total degree `deg`."""

    def __init__(self, deg: int, c=None):
        self.deg = deg
        self.c = np.zeros((deg + 1,) * NVAR) if c is None else np.array(c, float)

    @classmethod
    def const(cls, deg, a):
        p = cls(deg)
        p.c[0, 0, 0] = a
        return p

    @classmethod
    def var(cls, deg, i):
        p = cls(deg)
        e = [0, 0, 0]
        e[i] = 1
        p.c[tuple(e)] = 1.0
        return p

    @classmethod
    def from_terms(cls, deg, terms):
        p = cls(deg)
        for e, a in terms.items():
            if sum(e) <= deg:
                p.c[tuple(e)] += a
        return p

    def terms(self):
        idx = np.argwhere(self.c != 0)
        return {tuple(int(k) for k in i): float(self.c[tuple(i)]) for i in idx
                if sum(i) <= self.deg}

    def __add__(self, o):
        if not isinstance(o, Poly):
            return self + Poly.const(self.deg, o)
        return Poly(self.deg, self.c + o.c)

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.deg, -self.c)

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if not isinstance(o, Poly):
            return Poly(self.deg, self.c * o)
        out = Poly(self.deg)
        D = self.deg
        for e1, a in self.terms().items():
            for e2, b in o.terms().items():
                e = (e1[0] + e2[0], e1[1] + e2[1], e1[2] + e2[2])
                if sum(e) <= D:
                    out.c[e] += a * b
        return out

    __rmul__ = __mul__

    def diff(self, i: int):
        out = Poly(self.deg)
        for e, a in self.terms().items():
            if e[i] > 0:
                e2 = list(e)
                e2[i] -= 1
                out.c[tuple(e2)] += a * e[i]
        return out

    def grad(self):
        return [self.diff(i) for i in range(NVAR)]

    def part(self, j: int) -> "HomogeneousPolynomial":
        return HomogeneousPolynomial(j, {e: a for e, a in self.terms().items() if sum(e) == j})

    def upto(self, j: int) -> "Poly":
        return Poly.from_terms(self.deg, {e: a for e, a in self.terms().items() if sum(e) <= j})

    def __call__(self, X):
        X = np.asarray(X, float)
        x, v, y = X[0], X[1], X[2]
        out = np.zeros(np.broadcast(x, v, y).shape)
        for e, a in self.terms().items():
            out = out + a * x ** e[0] * v ** e[1] * y ** e[2]
        return out

    def maxabs(self):
        return float(np.max(np.abs(self.c))) if self.c.size else 0.0


@dataclass
class HomogeneousPolynomial:
    degree: int
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        for e in self.coeffs:
            if sum(e) != self.degree or len(e) != NVAR:
                raise ValueError(f"monomial {e} is not of degree {self.degree}")

    def vector(self):
        return np.array([self.coeffs.get(e, 0.0) for e in monomials(self.degree)])

    @classmethod
    def from_vector(cls, j, vec):
        return cls(j, {e: float(a) for e, a in zip(monomials(j), vec) if a != 0.0})

    def to_poly(self, deg=None):
        return Poly.from_terms(max(self.degree, deg or 0), self.coeffs)

    def __call__(self, X):
        return self.to_poly()(X)

    def __neg__(self):
        return HomogeneousPolynomial(self.degree, {e: -a for e, a in self.coeffs.items()})

    def to_dict(self):
        return {"degree": self.degree,
                "terms": [[list(e), a] for e, a in sorted(self.coeffs.items(), reverse=True)]}


def linear_field_operator(Ups, mu: float, j: int) -> np.ndarray:
    """Matrix of p -> (Ups X).grad p + mu p on degree-j monomials."""
    basis = monomials(j)
    pos = {e: k for k, e in enumerate(basis)}
    M = mu * np.eye(len(basis))
    Ups = np.asarray(Ups, float)
    for col, e in enumerate(basis):
        # (Ups X)_i d_i X^e = sum_k Ups[i,k] e_i X^(e - 1_i + 1_k)
        for i in range(NVAR):
            if e[i] == 0:
                continue
            for k in range(NVAR):
                if Ups[i, k] == 0.0:
                    continue
                e2 = list(e)
                e2[i] -= 1
                e2[k] += 1
                M[pos[tuple(e2)], col] += Ups[i, k] * e[i]
    return M


def solve_hom_equation(Ups, mu: float, R: HomogeneousPolynomial,
                       cond_max: float = 1e12) -> HomogeneousPolynomial:
    """Solve (Ups X.grad + mu) p = -R on homogeneous polynomials of degree R.degree."""
    j = R.degree
    M = linear_field_operator(Ups, mu, j)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > cond_max:
        raise NearResonantError(f"near-resonant operator on degree {j} (cond={cond:.3e})")
    sol = sla.lu_solve(sla.lu_factor(M), -R.vector())
    return HomogeneousPolynomial.from_vector(j, sol)


def solve_linear_eikonal(phase: ExtendedPhase, saddle: CriticalPoint):
    """xi = t (alpha e1, e1, 0) and mu for an index-1 saddle (d = 1, e1 = 1)."""
    if saddle.index != 1:
        raise TopologyError("saddle must have Morse index 1")
    neg = [e for e in saddle.hess_eigs if e < 0]
    if len(neg) != 1:
        raise TopologyError("Hessian at the saddle must have exactly one negative eigenvalue")
    g = phase.gamma
    eta = -neg[0]
    mu = mu_of_saddle(g, eta)
    alpha = -0.5 * (g + np.sqrt(g * g + 4.0 * eta))
    e1 = 1.0
    t = np.sqrt(mu / g) / abs(e1)
    xi = t * np.array([alpha * e1, e1, 0.0])
    return xi, mu


def _taylor_dV(phase: ExtendedPhase, s: float, deg: int) -> Poly:
    """Taylor polynomial of V'(s + x) in the local x variable, to degree `deg`."""
    X = Poly.var(deg, 0)
    out = Poly(deg)
    term = Poly.const(deg, 1.0)
    fact = 1.0
    for k in range(0, min(deg, 3) + 1):
        out = out + term * (float(phase.V.deriv(s, k + 1)) / fact)
        term = term * X
        fact *= (k + 1)
    return out


def _transport_field(phase: ExtendedPhase, s: float, deg: int):
    """Local polynomial field F = b0 + 2 A grad f."""
    x, v, y = (Poly.var(deg, i) for i in range(NVAR))
    nu, g = phase.nu, phase.gamma
    Fx = v
    Fv = -_taylor_dV(phase, s, deg) - nu * (y * v) + g * v
    Fy = nu * (v * v)
    return [Fx, Fv, Fy]


def _w0(F, l0, gamma):
    g = l0.grad()
    return F[0] * g[0] + F[1] * g[1] + F[2] * g[2] + gamma * (l0 * (g[1] * g[1]))


def _w1(F, l0, l1, gamma, b1):
    g0 = l0.grad()
    g1 = l1.grad()
    out = F[0] * g1[0] + F[1] * g1[1] + F[2] * g1[2]
    out = out + 2 * gamma * (l0 * g0[1]) * g1[1] + gamma * (g0[1] * g0[1]) * l1
    R1 = b1[0] * g0[0] + b1[1] * g0[1] + b1[2] * g0[2] - gamma * g0[1].diff(1)
    return out + R1


@dataclass
class EikonalData:
    s: float
    gamma: float
    nu: float
    H: np.ndarray
    B: np.ndarray
    A: np.ndarray
    Lam: np.ndarray
    Pi_xi: np.ndarray
    Ups: np.ndarray
    xi: np.ndarray
    mu: float
    pieces: dict
    orientation: int = 1

    @property
    def ell0(self) -> Poly:
        p = Poly(3)
        for k in ("l01", "l02", "l03"):
            p = p + self.pieces[k].to_poly(3)
        return p

    @property
    def ell1(self) -> Poly:
        return self.pieces["l10"].to_poly(3) + self.pieces["l11"].to_poly(3)

    def ell(self, h) -> Poly:
        return self.ell0 + self.ell1 * h

    def flipped(self) -> "EikonalData":
        return EikonalData(s=self.s, gamma=self.gamma, nu=self.nu, H=self.H, B=self.B,
                           A=self.A, Lam=self.Lam, Pi_xi=self.Pi_xi, Ups=self.Ups,
                           xi=-self.xi, mu=self.mu,
                           pieces={k: -p for k, p in self.pieces.items()},
                           orientation=-self.orientation)

    def to_dict(self):
        return {"s": self.s, "gamma": self.gamma, "nu": self.nu, "mu": self.mu,
                "xi": self.xi.tolist(), "orientation": self.orientation,
                "H": self.H.tolist(), "B": self.B.tolist(), "A": self.A.tolist(),
                "Lambda": self.Lam.tolist(), "Pi_xi": self.Pi_xi.tolist(),
                "Upsilon": self.Ups.tolist(),
                "pieces": {k: p.to_dict() for k, p in self.pieces.items()}}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        arr = lambda k: np.array(d[k], float)
        pieces = {k: HomogeneousPolynomial(p["degree"], {tuple(e): a for e, a in p["terms"]})
                  for k, p in d["pieces"].items()}
        return cls(s=d["s"], gamma=d["gamma"], nu=d["nu"], H=arr("H"), B=arr("B"),
                   A=arr("A"), Lam=arr("Lambda"), Pi_xi=arr("Pi_xi"), Ups=arr("Upsilon"),
                   xi=arr("xi"), mu=d["mu"], pieces=pieces, orientation=d["orientation"])


def _orientation(xi, s: float, toward: float, eta: float) -> int:
    step = min(1.0 / np.sqrt(eta), abs(toward - s) / 2.0) * np.sign(toward - s)
    return 1 if xi[0] * step > 0 else -1


def build_ell(phase: ExtendedPhase, saddle: CriticalPoint, toward: float | None = None) -> EikonalData:
    """Solve the eikonal equation to degree 3 and the transport equation to degree 1.

    `toward` is the x-location of the well that should sit on the positive side
    of xi.(X - s); if None the raw eigenvector sign is kept.
    """
    xi, mu = solve_linear_eikonal(phase, saddle)
    orient = 1
    if toward is not None:
        orient = _orientation(xi, saddle.x, toward, saddle.eta)
        xi = orient * xi
    H, B = phase.saddle_matrices(saddle)
    A = phase.A
    Lam = 2 * H @ A + B.T
    Pi = np.outer(xi, xi)
    Ups = Lam.T + 2 * A @ Pi
    g = phase.gamma
    F = _transport_field(phase, saddle.x, 3)

    l01 = HomogeneousPolynomial(1, {e: float(a) for e, a in zip(monomials(1), xi) if a != 0})
    l0 = l01.to_poly(3)
    pieces = {"l01": l01}
    for j in (2, 3):
        R = _w0(F, l0, g).part(j)
        p = solve_hom_equation(Ups, mu, R)
        pieces[f"l0{j}"] = p
        l0 = l0 + p.to_poly(3)
    # degree-0 transport: mu l10 + b1.xi - div A grad l02 = 0
    divA = g * pieces["l02"].to_poly(3).diff(1).diff(1).c[0, 0, 0]
    l10 = float((divA - float(phase.b1 @ xi)) / mu)
    pieces["l10"] = HomogeneousPolynomial(0, {(0, 0, 0): l10} if l10 != 0 else {})
    R = _w1(F, l0, Poly.const(3, l10), g, phase.b1).part(1)
    pieces["l11"] = solve_hom_equation(Ups, mu, R)
    return EikonalData(s=saddle.x, gamma=g, nu=phase.nu, H=H, B=B, A=A, Lam=Lam,
                       Pi_xi=Pi, Ups=Ups, xi=xi, mu=mu, pieces=pieces, orientation=orient)


def taylor_residuals(data: EikonalData, phase: ExtendedPhase):
    """Relative size of the degree<=3 part of w0 and degree<=1 part of w1."""
    F = _transport_field(phase, data.s, 3)
    l0, l1 = data.ell0, data.ell1
    w0 = _w0(F, l0, data.gamma).upto(3)
    w1 = _w1(F, l0, l1, data.gamma, phase.b1).upto(1)
    scale0 = max(l0.maxabs() * max(f.maxabs() for f in F), 1e-300)
    scale1 = max(l1.maxabs() * max(f.maxabs() for f in F), l0.maxabs(), 1e-300)
    return w0.maxabs() / scale0, w1.maxabs() / scale1


def eval_residual_w(data: EikonalData, phase: ExtendedPhase, X, h: float):
    """w = (b + 2A grad f).grad ell + ell A grad ell.grad ell - h div A grad ell."""
    X = np.asarray(X, float)
    x, v, y = X[0], X[1], X[2]
    U = np.stack(np.broadcast_arrays(x - data.s, v, y))
    ell = data.ell(h)
    gl = [d(U) for d in ell.grad()]
    l = ell(U)
    dvv = ell.diff(1).diff(1)(U)
    b = phase.b(x, v, y, h)
    g = phase.gamma
    field_ = [b[0], b[1] + g * v, b[2]]
    return (field_[0] * gl[0] + field_[1] * gl[1] + field_[2] * gl[2]
            + g * l * gl[1] ** 2 - h * g * dvv)


def check_det_identity(data: EikonalData) -> float:
    """|det(H + Pi_xi) + det H| / |det H|; raises if H + Pi_xi is not positive."""
    M = data.H + data.Pi_xi
    ev = np.linalg.eigvalsh(M)
    if ev.min() <= 0:
        raise TopologyError(f"H + Pi_xi is not positive definite (min eig {ev.min():.3e})")
    dH = np.linalg.det(data.H)
    return abs(np.linalg.det(M) + dH) / abs(dH)


def invariants(data: EikonalData) -> dict:
    xi, mu = data.xi, data.mu
    r = {}
    r["lam_xi"] = float(np.linalg.norm(data.Lam @ xi + mu * xi) / np.linalg.norm(mu * xi))
    r["A_xi_xi"] = float(abs(xi @ data.A @ xi - mu))
    r["Hinv_xi_xi"] = float(abs(xi @ np.linalg.solve(data.H, xi) + 2.0))
    r["ups_min_re"] = float(np.min(np.linalg.eigvals(data.Ups).real))
    r["BTH_antisym"] = float(np.max(np.abs(data.B.T @ data.H + (data.B.T @ data.H).T)))
    return r


def scaled_residual_max(data: EikonalData, phase: ExtendedPhase, h: float,
                        n: int = 4000, seed: int = 0) -> float:
    """max over |u| <= 1 of |w(s + sqrt(h) u, h)| / h^2, sampled on n points of the
    unit ball (random directions and radii, plus the sphere itself)."""
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(3, n))
    U /= np.linalg.norm(U, axis=0)
    r = np.concatenate([np.ones(n // 2), rng.uniform(0, 1, n - n // 2) ** (1 / 3)])
    U = U * r
    X = np.array([data.s, 0.0, 0.0])[:, None] + np.sqrt(h) * U
    return float(np.max(np.abs(eval_residual_w(data, phase, X, h))) / h ** 2)

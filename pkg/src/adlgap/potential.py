"""Potentials on the line, their critical points, and the lifted phase function.

The phase space is X = (x, v, y) in R^3 and the lifted function is
f(x, v, y) = V(x)/2 + (v^2 + y^2)/4.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .errors import (DegenerateWellsError, EmptyLandscapeError, NonMorseError,
                     NotDoubleWellError, ParameterError)

# order-4 central stencil for a first derivative
_C4 = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
_O4 = np.array([-2.0, -1.0, 1.0, 2.0])


def _fd_first(fun, step):
    def d(x):
        x = np.asarray(x, dtype=float)
        return sum(c * fun(x + o * step) for c, o in zip(_C4, _O4)) / step
    return d


class Potential:
    """Scalar potential V on R (d = 1) with derivatives up to order 4.

    `derivs` holds callables for V, V', V'', V''', V''''. Missing entries are
    filled by order-4 central differences of the previous derivative with step
    fd_step * scale (the step grows by 10x per filled order to keep roundoff
    in check).
    """

    dim = 1

    def __init__(self, derivs: Sequence[Optional[Callable]], box=(-3.0, 3.0),
                 name: str = "custom", scale: float = 1.0, fd_step: float = 1e-4,
                 coeffs=None):
        if derivs[0] is None:
            raise ParameterError("V itself must be given")
        ds = list(derivs) + [None] * (5 - len(derivs))
        self.exact = [d is not None for d in ds]
        step = fd_step * scale
        for k in range(1, 5):
            if ds[k] is None:
                ds[k] = _fd_first(ds[k - 1], step)
                step *= 10.0
        self._d = tuple(ds)
        self.box = (float(box[0]), float(box[1]))
        self.name = name
        self.coeffs = None if coeffs is None else tuple(float(c) for c in coeffs)

    def __call__(self, x):
        return self._d[0](x)

    def deriv(self, x, k: int):
        if k < 0 or k > 4:
            raise ParameterError("derivative order must be in 0..4")
        return self._d[k](x)

    def grad(self, x):
        return self._d[1](x)

    def hess(self, x):
        return self._d[2](x)

    def d3(self, x):
        return self._d[3](x)

    def d4(self, x):
        return self._d[4](x)

    def to_dict(self):
        return {"name": self.name, "box": list(self.box),
                "coeffs": None if self.coeffs is None else list(self.coeffs)}


def quartic(a, b, c, e, box=(-3.0, 3.0), name="quartic") -> Potential:
    """V(x) = a x^4 + b x^3 + c x^2 + e x, with exact derivatives."""
    p = Polynomial([0.0, e, c, b, a])
    ps = [p.deriv(k) for k in range(5)]
    return Potential(ps, box=box, name=name, coeffs=(a, b, c, e))


def from_callbacks(V, dV=None, d2V=None, d3V=None, d4V=None, box=(-3.0, 3.0),
                   name="custom", scale=1.0) -> Potential:
    return Potential([V, dV, d2V, d3V, d4V], box=box, name=name, scale=scale)


PRESETS = {
    "tilted_quartic": dict(a=0.25, b=0.0, c=-0.5, e=0.1, box=(-2.0, 2.0)),
    "figure1": dict(a=8.0, b=-2.0, c=-7.0, e=0.5, box=(-1.5, 1.5)),
    "symmetric_quartic": dict(a=0.25, b=0.0, c=-0.5, e=0.0, box=(-2.0, 2.0)),
}


def preset(name: str) -> Potential:
    if name not in PRESETS:
        raise ParameterError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    p = dict(PRESETS[name])
    box = p.pop("box")
    return quartic(**p, box=box, name=name)


@dataclass(frozen=True)
class CriticalPoint:
    x: float
    index: int
    hess_eigs: tuple
    value: float
    eta: Optional[float] = None

    def to_dict(self):
        return {"x": self.x, "index": self.index, "hess_eigs": list(self.hess_eigs),
                "value": self.value, "eta": self.eta}


def find_critical_points(V: Potential, box=None, tol: float = 1e-10,
                         n_seeds: int = 64, max_iter: int = 200) -> list:
    """Newton on V' from a uniform grid of seeds; dedup within 10*tol.

    Degeneracy is flagged when |V''(x*)| < sqrt(tol): at a degenerate root
    Newton stalls with |V''| of order sqrt(|V'|), so the bare tol would never
    trigger.
    """
    lo, hi = V.box if box is None else box
    g_lo, g_hi = V.grad(lo), V.grad(hi)
    if not (g_lo < 0 < g_hi):
        raise EmptyLandscapeError(
            f"gradient does not point outward on the box [{lo}, {hi}]; "
            "critical points may lie outside it")
    seeds = np.linspace(lo, hi, n_seeds)
    roots = []
    for x0 in seeds:
        x = float(x0)
        for _ in range(max_iter):
            g, H = float(V.grad(x)), float(V.hess(x))
            if abs(g) <= tol * 1e-3 or H == 0.0:
                break
            step = g / H
            x -= step
            if not (lo - 1.0 <= x <= hi + 1.0):
                break
            if abs(step) < 1e-15 * max(1.0, abs(x)):
                break
        if lo <= x <= hi and abs(V.grad(x)) <= tol:
            roots.append(x)
    if not roots:
        raise EmptyLandscapeError("no critical points found in the box")
    roots.sort()
    uniq = [roots[0]]
    for r in roots[1:]:
        if abs(r - uniq[-1]) > 10 * tol:
            uniq.append(r)
    out = []
    for x in uniq:
        H = float(V.hess(x))
        if abs(H) < np.sqrt(tol):
            raise NonMorseError(f"non-Morse point at x={x:.12g} (V''={H:.3e})")
        idx = int(H < 0)
        out.append(CriticalPoint(x=float(x), index=idx, hess_eigs=(H,),
                                 value=float(V(x)), eta=(-H if idx == 1 else None)))
    return out


@dataclass(frozen=True)
class DoubleWellTopology:
    m_under: CriticalPoint
    m_hat: CriticalPoint
    s: CriticalPoint
    S: float
    S_tilde: float
    det_hess: dict = field(default_factory=dict)
    D: dict = field(default_factory=dict)

    def points(self):
        return {"m_under": self.m_under, "m_hat": self.m_hat, "s": self.s}

    def to_dict(self):
        return {"m_under": self.m_under.to_dict(), "m_hat": self.m_hat.to_dict(),
                "s": self.s.to_dict(), "S": self.S, "S_tilde": self.S_tilde,
                "det_hess": dict(self.det_hess), "D": dict(self.D)}


def classify_topology(points, V: Potential, depth_tol: float = 1e-8) -> DoubleWellTopology:
    mins = [p for p in points if p.index == 0]
    sads = [p for p in points if p.index == 1]
    if len(mins) != 2 or len(sads) != 1 or len(points) != 3:
        census = sorted(p.index for p in points)
        raise NotDoubleWellError(f"not a double well: index census {census}")
    s = sads[0]
    a, b = sorted(mins, key=lambda p: p.value)
    if abs(a.value - b.value) < depth_tol * (s.value - a.value):
        raise DegenerateWellsError("degenerate wells: equal depths within tolerance")
    m_under, m_hat = a, b
    S = s.value - m_hat.value
    det_hess = {k: float(np.prod(p.hess_eigs)) for k, p in
                (("m_under", m_under), ("m_hat", m_hat), ("s", s))}
    # Hess f at (x*,0,0) = diag(V''/2, 1/2, 1/2)
    D = {k: float(np.sqrt(abs(d / 8.0))) for k, d in det_hess.items()}
    return DoubleWellTopology(m_under=m_under, m_hat=m_hat, s=s, S=S,
                              S_tilde=S / 2.0, det_hess=det_hess, D=D)


def double_well(V: Potential, **kw) -> DoubleWellTopology:
    return classify_topology(find_critical_points(V, **kw), V)


class ExtendedPhase:
    """Lifted phase data on R^3 for the generator with parameters gamma, nu.

    Drift b = b0 + h b1 with b0 = (v, -V' - nu y v, nu v^2) and b1 = (0, 0, -nu),
    diffusion A = diag(0, gamma, 0), and c = gamma (v^2/4 - h/2).
    """

    def __init__(self, V: Potential, gamma: float, nu: float):
        if not (gamma > 0 and nu > 0):
            raise ParameterError("gamma and nu must be positive")
        self.V = V
        self.gamma = float(gamma)
        self.nu = float(nu)
        self.A = np.diag([0.0, self.gamma, 0.0])
        self.b1 = np.array([0.0, 0.0, -self.nu])

    def f(self, x, v, y):
        return 0.5 * self.V(x) + 0.25 * (np.asarray(v) ** 2 + np.asarray(y) ** 2)

    def grad_f(self, x, v, y):
        return np.array([0.5 * self.V.grad(x), 0.5 * np.asarray(v, float),
                         0.5 * np.asarray(y, float)])

    def hess_f(self, x, v=0.0, y=0.0):
        return np.diag([0.5 * float(self.V.hess(x)), 0.5, 0.5])

    def b0(self, x, v, y):
        v = np.asarray(v, float)
        y = np.asarray(y, float)
        return np.array([v, -self.V.grad(x) - self.nu * y * v, self.nu * v * v])

    def b(self, x, v, y, h):
        b0 = self.b0(x, v, y)
        b0[2] = b0[2] - h * self.nu
        return b0

    def db0(self, x, v=0.0, y=0.0):
        nu = self.nu
        return np.array([[0.0, 1.0, 0.0],
                         [-float(self.V.hess(x)), -nu * y, -nu * v],
                         [0.0, 2 * nu * v, 0.0]])

    def c(self, v, h):
        return self.gamma * (np.asarray(v) ** 2 / 4.0 - h / 2.0)

    def saddle_matrices(self, s: CriticalPoint):
        """(H, B) = (Hess f, db0) at (s, 0, 0)."""
        return self.hess_f(s.x), self.db0(s.x)

"""Global quasimodes built from the saddle phase, and their interaction quantities.

psi_under = 2 e^{-(f - f(m_under))/h}
psi_hat   = theta (chi_ell + 1) e^{-(f - f(m_hat))/h}

chi_ell is the normalized primitive of zeta(r/tau) e^{-r^2/2h} evaluated at ell on
the saddle component C, and +-1 on the two well components E+ / E-. Integrals are
taken by composite Gauss-Legendre quadrature in (x, v, y) and carried in scaled
form e^{-2(f - f_ref)/h} to avoid underflow.

For real g, P(g e^{-f/h}) = h e^{-f/h} G[g] with
    G[g] = v g_x - V' g_v + nu((v^2 - h) g_y - y v g_v) + gamma(-h g_vv + v g_v),
and <P(g e^{-f/h}), g e^{-f/h}> = gamma h^2 int g_v^2 e^{-2f/h}.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import erf

from .errors import AccuracyError, GeometryError
from .potential import DoubleWellTopology, ExtendedPhase
from .wkb import EikonalData

_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)


# -- plateau profile --------------------------------------------------------

def _s5(t):
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10 - 15 * t + 6 * t * t)


def _s5p(t):
    inside = (t > 0) & (t < 1)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30 * t * t * (1 - t) ** 2, 0.0)


def _s5pp(t):
    inside = (t > 0) & (t < 1)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 60 * t * (1 - t) * (1 - 2 * t), 0.0)


def zeta(r):
    """Even plateau: 1 on [-1, 1], 0 outside [-2, 2], quintic smoothstep between."""
    a = np.abs(np.asarray(r, float))
    return _s5(2.0 - a)


def zeta_prime(r):
    r = np.asarray(r, float)
    return -np.sign(r) * _s5p(2.0 - np.abs(r))


def _zeta_gauss_int(a, b, tau, h):
    """int_a^b zeta(r/tau) e^{-r^2/2h} dr for tau <= a <= b <= 2 tau (vectorized in b)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    r = mid[..., None] + half[..., None] * _GL_X
    return half * np.sum(_GL_W * zeta(r / tau) * np.exp(-r * r / (2 * h)), axis=-1)


def normalization_Ch(tau: float, h: float, plateau: bool = True) -> float:
    """C_h = 1/2 int zeta(r/tau) e^{-r^2/2h} dr. plateau=False uses zeta = 1."""
    if not plateau:
        return 0.5 * np.sqrt(2 * np.pi * h)
    core = np.sqrt(np.pi * h / 2) * erf(tau / np.sqrt(2 * h))
    return float(core + _zeta_gauss_int(tau, 2 * tau, tau, h))


def primitive(l, tau: float, h: float):
    """int_0^l zeta(r/tau) e^{-r^2/2h} dr (odd in l)."""
    l = np.asarray(l, float)
    a = np.minimum(np.abs(l), 2 * tau)
    core = np.sqrt(np.pi * h / 2) * erf(np.minimum(a, tau) / np.sqrt(2 * h))
    tail = np.where(a > tau, _zeta_gauss_int(np.full_like(a, tau), np.maximum(a, tau), tau, h), 0.0)
    return np.sign(l) * (core + tail)


# -- region geometry ---------------------------------------------------------

OUT, C_REG, E_PLUS, E_MINUS = 0, 1, 2, 3


@dataclass
class CutoffGeometry:
    tau: float
    delta: float
    s: float
    xi: np.ndarray
    f_s: float
    xg: np.ndarray
    qg: np.ndarray
    labels: np.ndarray = field(repr=False)
    fill_idx: tuple = field(repr=False)

    def q(self, x, v):
        return self.xi[0] * (np.asarray(x) - self.s) + self.xi[1] * np.asarray(v)

    def v_of(self, x, q):
        return (q - self.xi[0] * (x - self.s)) / self.xi[1]

    def classify(self, phase: ExtendedPhase, x, v, y):
        """Region label of points (x, v, y) for the (4 tau, 4 delta) sets."""
        x, v, y = np.broadcast_arrays(*(np.asarray(a, float) for a in (x, v, y)))
        q = self.q(x, v)
        ix = np.clip(np.rint((x - self.xg[0]) / (self.xg[1] - self.xg[0])), 0, len(self.xg) - 1).astype(int)
        iq = np.clip(np.rint((q - self.qg[0]) / (self.qg[1] - self.qg[0])), 0, len(self.qg) - 1).astype(int)
        fi, fj = self.fill_idx
        lab = self.labels[fi[ix, iq], fj[ix, iq]]
        inside = phase.f(x, v, y) <= self.f_s + 4 * self.delta
        return np.where(inside, lab, OUT)

    def label_at(self, x, q):
        ix = int(np.argmin(np.abs(self.xg - x)))
        iq = int(np.argmin(np.abs(self.qg - q)))
        return int(self.labels[ix, iq])

    def to_dict(self):
        return {"tau": self.tau, "delta": self.delta, "s": self.s, "xi": self.xi.tolist(),
                "f_s": self.f_s}


def _sublevel_xrange(phase: ExtendedPhase, level: float, box, n=20001):
    xs = np.linspace(box[0], box[1], n)
    ok = 0.5 * phase.V(xs) <= level
    if not ok.any():
        raise GeometryError("empty sublevel set")
    return xs[ok].min(), xs[ok].max()


def build_geometry(phase: ExtendedPhase, topo: DoubleWellTopology, eik: EikonalData,
                   tau: float, delta: float, n: int = 801) -> CutoffGeometry:
    s = topo.s.x
    f_s = 0.5 * topo.s.value
    level = f_s + 4 * delta
    span = max(abs(topo.m_under.x - s), abs(topo.m_hat.x - s))
    x0, x1 = _sublevel_xrange(phase, level, (s - 4 * span - 1, s + 4 * span + 1))
    pad = 0.05 * (x1 - x0)
    xg = np.linspace(x0 - pad, x1 + pad, n)
    vmax = 2 * np.sqrt(max(level - 0.5 * phase.V(xg).min(), 0.0)) * 1.05
    xi = eik.xi
    qext = abs(xi[0]) * max(abs(xg[0] - s), abs(xg[-1] - s)) + abs(xi[1]) * vmax
    qg = np.linspace(-qext, qext, n)
    X, Q = np.meshgrid(xg, qg, indexing="ij")
    Vv = (Q - xi[0] * (X - s)) / xi[1]
    sub = 0.5 * phase.V(X) + 0.25 * Vv ** 2 <= level
    slab = sub & (np.abs(Q) <= 4 * tau)
    lab_b, _ = ndimage.label(slab)
    i_s = int(np.argmin(np.abs(xg - s)))
    j_s = int(np.argmin(np.abs(qg)))
    cs = lab_b[i_s, j_s]
    if cs == 0:
        raise GeometryError("saddle is not interior to the slab component")
    Cmask = lab_b == cs
    E = sub & ~Cmask
    lab_e, _ = ndimage.label(E)
    qm = xi[0] * (topo.m_hat.x - s)
    i_m = int(np.argmin(np.abs(xg - topo.m_hat.x)))
    j_m = int(np.argmin(np.abs(qg - qm)))
    ep = lab_e[i_m, j_m]
    if ep == 0:
        raise GeometryError("m_hat is not in E (tau or delta too large)")
    labels = np.full(sub.shape, OUT, dtype=np.int8)
    labels[Cmask] = C_REG
    labels[lab_e == ep] = E_PLUS
    labels[E & (lab_e != ep)] = E_MINUS
    qu = xi[0] * (topo.m_under.x - s)
    i_u = int(np.argmin(np.abs(xg - topo.m_under.x)))
    j_u = int(np.argmin(np.abs(qg - qu)))
    if labels[i_u, j_u] != E_MINUS:
        raise GeometryError("m_under is not in E- (tau or delta too large)")
    _, idx = ndimage.distance_transform_edt(labels == OUT, return_indices=True)
    return CutoffGeometry(tau=tau, delta=delta, s=s, xi=xi.copy(), f_s=f_s, xg=xg, qg=qg,
                          labels=labels, fill_idx=(idx[0], idx[1]))


def default_cutoffs(topo: DoubleWellTopology, eik: EikonalData):
    """tau = q(m_hat)/5 where q(m_hat) = xi.(m_hat - s), and delta = S/8."""
    q_m = abs(eik.xi[0] * (topo.m_hat.x - topo.s.x))
    return q_m / 5.0, topo.S / 8.0


# -- quasimodes -----------------------------------------------------------------

@dataclass
class Quasimode:
    which: str
    h: float
    phase: ExtendedPhase = field(repr=False)
    topo: DoubleWellTopology = field(repr=False)
    eik: EikonalData | None = field(default=None, repr=False)
    geom: CutoffGeometry | None = field(default=None, repr=False)
    Ch: float = 1.0
    norm: float = float("nan")          # ||psi||
    integrals: dict = field(default_factory=dict, repr=False)

    def chi(self, x, v, y):
        g = self.geom
        lab = g.classify(self.phase, x, v, y)
        ell = self.eik.ell(self.h)
        U = np.stack(np.broadcast_arrays(np.asarray(x, float) - g.s, v, y))
        c = primitive(ell(U), g.tau, self.h) / self.Ch
        return np.where(lab == C_REG, c, np.where(lab == E_PLUS, 1.0, -1.0))

    def theta(self, x, v, y):
        g = self.geom
        return 1.0 - _s5((self.phase.f(x, v, y) - g.f_s - g.delta) / g.delta)

    def __call__(self, x, v, y):
        """psi(X)."""
        f = self.phase.f(x, v, y)
        if self.which == "m_under":
            return 2.0 * np.exp(-(f - 0.5 * self.topo.m_under.value) / self.h)
        return (self.theta(x, v, y) * (self.chi(x, v, y) + 1.0)
                * np.exp(-(f - 0.5 * self.topo.m_hat.value) / self.h))

    def normalized(self, x, v, y):
        return self(x, v, y) / self.norm

    def to_dict(self):
        d = {"which": self.which, "h": self.h, "norm": self.norm, "C_h": self.Ch,
             "quadrature": {k: v for k, v in self.integrals.items() if k in ("nodes", "rel_change")}}
        if self.geom is not None:
            d["geometry"] = self.geom.to_dict()
        return d


def _gl_nodes(a, b, width, npts=6):
    npan = max(1, int(np.ceil((b - a) / width)))
    t, w = np.polynomial.legendre.leggauss(npts)
    edges = np.linspace(a, b, npan + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    return (mid[:, None] + half[:, None] * t).ravel(), (half[:, None] * w).ravel()


def _norm_under(phase, topo, h):
    m = topo.m_under.x
    V0 = topo.m_under.value
    w = np.sqrt(h / abs(topo.m_under.hess_eigs[0]))
    lo, hi = m - 60 * w, m + 60 * w
    span = max(abs(topo.m_hat.x - m), abs(topo.s.x - m))
    xs, ws = _gl_nodes(min(lo, m - 3 * span), max(hi, m + 3 * span), w / 2, 8)
    ix = np.sum(ws * np.exp(-(phase.V(xs) - V0) / h))
    return float(np.sqrt(4 * 2 * np.pi * h * ix))


def build_quasimode(m: str, topo: DoubleWellTopology, eik: EikonalData | None,
                    cut: CutoffGeometry | None, h: float, phase: ExtendedPhase,
                    width_factor: float = 1.0, check: bool = True, rtol: float = 1e-3) -> Quasimode:
    """psi_m with its norm. For m_hat all integrals are computed here; with check
    they are recomputed on panels twice as wide and AccuracyError is raised when
    the norm or the P-form moves by more than rtol."""
    if m == "m_under":
        q = Quasimode("m_under", h, phase, topo)
        q.norm = _norm_under(phase, topo, h)
        return q
    if m != "m_hat":
        raise ValueError("m must be 'm_under' or 'm_hat'")
    if cut is None or eik is None:
        raise GeometryError("the m_hat quasimode needs the saddle phase and the cutoff geometry")
    if cut.label_at(topo.s.x, 0.0) != C_REG:
        raise GeometryError("saddle not interior to C")
    q = Quasimode("m_hat", h, phase, topo, eik, cut, Ch=normalization_Ch(cut.tau, h))
    integ = integrate_hat(q, width_factor)
    if check:
        coarse = integrate_hat(q, 2 * width_factor)
        rel = max(abs(coarse[k] / integ[k] - 1) for k in ("norm2", "form"))
        integ["rel_change"] = rel
        if not rel <= rtol:
            raise AccuracyError(f"quadrature not converged at h={h}", estimate=rel)
    q.norm = float(np.sqrt(integ["norm2"]))
    q.integrals = integ
    return q


def _chi_parts(q: Quasimode, x, v, y, lab):
    """chi and ell on flat point arrays (ell is only evaluated inside C)."""
    geo, h = q.geom, q.h
    inC = lab == C_REG
    chi = np.where(lab == E_PLUS, 1.0, -1.0)
    l = np.zeros_like(x)
    if inC.any():
        U = np.stack([x[inC] - geo.s, v[inC], y[inC]])
        l[inC] = q.eik.ell(h)(U)
        chi[inC] = primitive(l[inC], geo.tau, h) / q.Ch
    return chi, l


def _g_derivs(q: Quasimode, x, v, y, lab, chi, l):
    """First derivatives and g_vv of g = theta (chi + 1) on flat point arrays."""
    ph, geo, h = q.phase, q.geom, q.h
    tau, Ch = geo.tau, q.Ch
    f = ph.f(x, v, y)
    t = (f - geo.f_s - geo.delta) / geo.delta
    th = 1.0 - _s5(t)
    th1 = -_s5p(t) / geo.delta
    th2 = -_s5pp(t) / geo.delta ** 2
    fx, fv, fy = 0.5 * ph.V.grad(x), 0.5 * v, 0.5 * y
    k = chi + 1.0
    inC = lab == C_REG
    lx = np.zeros_like(x)
    lv, ly, lvv = lx.copy(), lx.copy(), lx.copy()
    if inC.any():
        ell = q.eik.ell(h)
        U = np.stack([x[inC] - geo.s, v[inC], y[inC]])
        dx, dv, dy = ell.grad()
        lx[inC], lv[inC], ly[inC] = dx(U), dv(U), dy(U)
        lvv[inC] = dv.diff(1)(U)
    gau = np.exp(-l * l / (2 * h))
    c1 = np.where(inC, zeta(l / tau) * gau / Ch, 0.0)
    c2 = np.where(inC, (zeta_prime(l / tau) / tau - l / h * zeta(l / tau)) * gau / Ch, 0.0)
    gx = th1 * fx * k + th * c1 * lx
    gv = th1 * fv * k + th * c1 * lv
    gy = th1 * fy * k + th * c1 * ly
    gvv = th2 * fv * fv * k + th1 * 0.5 * k + 2 * th1 * fv * c1 * lv + th * (c2 * lv * lv + c1 * lvv)
    return gx, gv, gy, gvv


def integrate_hat(q: Quasimode, width_factor: float = 1.0, npts: int = 6, cut: float = 60.0,
                  res_cut: float = 15.0) -> dict:
    """Scaled integrals for psi_hat by composite Gauss-Legendre in (x, v, y).

    Panel width is width_factor * sqrt h, reduced to resolve the theta shell and
    the zeta transition when those carry weight above e^{-res_cut}. The (v, y)
    panels are laid per x node over the fibre of supp theta. Derivatives
    are evaluated only where the P-integrand weight exceeds e^{-cut}: inside C with
    (ell^2 + 2(f - f(s)))/h < cut, and on the theta shell with 2(f - f(s))/h < cut.
    Elsewhere g is locally constant and the P-integrands vanish identically.

    norm2 = ||psi||^2 and sum1 = int theta(chi+1) e^{-2(f - f(m_hat))/h}. The P
    quantities form = <P psi, psi>, P_norm2, Pstar_norm2 are relative to
    e^{log_scale} with log_scale = -2 (f(s) - f(m_hat))/h.
    """
    ph, geo, h, topo = q.phase, q.geom, q.h, q.topo
    g_, nu = ph.gamma, ph.nu
    level = geo.f_s + 2 * geo.delta
    fm = 0.5 * topo.m_hat.value
    X, Q = np.meshgrid(geo.xg, geo.qg, indexing="ij")
    within = ((0.5 * ph.V(X) + 0.25 * geo.v_of(X, Q) ** 2 <= level)
              & ((geo.labels == C_REG) | (geo.labels == E_PLUS)))
    keep = within.any(axis=1)
    if not keep.any():
        raise GeometryError("empty support for psi_hat")
    dxg = geo.xg[1] - geo.xg[0]
    x0, x1 = geo.xg[keep].min() - 2 * dxg, geo.xg[keep].max() + 2 * dxg
    # panels resolve the Gaussian scale, and the theta shell and zeta transition
    # whenever their weight is not below e^{-res_cut}
    scales = [np.sqrt(h)]
    if 2 * geo.delta / h < res_cut:
        xx = np.linspace(x0, x1, 2001)
        gmax = np.sqrt(np.max(ph.V.grad(xx) ** 2) / 4 + (level - 0.5 * ph.V(xx).min()))
        scales.append(geo.delta / gmax)
    if geo.tau ** 2 / h < res_cut:
        scales.append(geo.tau / np.linalg.norm(geo.xi))
    wid = width_factor * min(scales)
    xs, wx = _gl_nodes(x0, x1, wid, npts)
    acc = dict(norm2=0.0, sum1=0.0, form=0.0, pn=0.0, psn=0.0)
    npts_total = 0
    n_eval = 0
    for xk, wk in zip(xs, wx):
        Vk = float(ph.V(xk))
        r2 = level - 0.5 * Vk
        if r2 <= 0:
            continue
        vmax = 2 * np.sqrt(r2)
        vs, wv = _gl_nodes(-vmax, vmax, wid, npts)
        Vg, Yg = np.meshgrid(vs, vs, indexing="ij")
        W = wk * np.outer(wv, wv)
        disk = 0.25 * (Vg ** 2 + Yg ** 2) <= r2
        v, y, w = Vg[disk], Yg[disk], W[disk]
        x = np.full_like(v, xk)
        npts_total += v.size
        lab = geo.classify(ph, x, v, y)
        live = (lab == C_REG) | (lab == E_PLUS)
        if not live.any():
            continue
        x, v, y, w, lab = x[live], v[live], y[live], w[live], lab[live]
        f = 0.5 * Vk + 0.25 * (v * v + y * y)
        chi, l = _chi_parts(q, x, v, y, lab)
        t = (f - geo.f_s - geo.delta) / geo.delta
        g = (1.0 - _s5(t)) * (chi + 1.0)
        eN = np.exp(-2 * (f - fm) / h)
        acc["norm2"] += np.sum(w * eN * g * g)
        acc["sum1"] += np.sum(w * eN * g)
        es = 2 * (f - geo.f_s) / h
        shell = (t > 0) & (t < 1)
        m = (((lab == C_REG) & (l * l / h + es < cut)) | (shell & (es < cut)))
        if not m.any():
            continue
        n_eval += int(m.sum())
        x, v, y, w, lab, chi, l, es = x[m], v[m], y[m], w[m], lab[m], chi[m], l[m], es[m]
        gx, gv, gy, gvv = _g_derivs(q, x, v, y, lab, chi, l)
        wS = w * np.exp(-es)
        Vp = ph.V.grad(xk)
        acc["form"] += g_ * h * h * np.sum(wS * gv * gv)
        skew = v * gx - Vp * gv + nu * ((v * v - h) * gy - y * v * gv)
        sym = g_ * (-h * gvv + v * gv)
        acc["pn"] += h * h * np.sum(wS * (skew + sym) ** 2)
        acc["psn"] += h * h * np.sum(wS * (-skew + sym) ** 2)
    return {"norm2": acc["norm2"], "sum1": acc["sum1"],
            "form": acc["form"], "P_norm2": acc["pn"], "Pstar_norm2": acc["psn"],
            "log_scale": -2 * (geo.f_s - fm) / h,
            "nodes": {"x": len(xs), "total": npts_total, "derivative_evals": n_eval}}


def gram_matrix(phi_under: Quasimode, phi_hat: Quasimode, h: float | None = None) -> np.ndarray:
    """2x2 Gram matrix of the normalized quasimodes. The diagonal is 1 by
    construction since both norms come from the same quadrature."""
    it = phi_hat.integrals
    topo = phi_hat.topo
    hh = phi_hat.h
    # <psi_hat, psi_under> = 2 e^{-(f(m_hat) - f(m_under))/h} * sum1
    dfm = 0.5 * (topo.m_hat.value - topo.m_under.value)
    off = 2.0 * np.exp(-dfm / hh) * it["sum1"] / (phi_hat.norm * phi_under.norm)
    return np.array([[1.0, off], [off, 1.0]])


def rayleigh_quotient(phase: ExtendedPhase, phi: Quasimode, h: float | None = None) -> float:
    """<P phi, phi> for the normalized quasimode (P psi_under = 0 exactly)."""
    if phi.which == "m_under":
        return 0.0
    it = phi.integrals
    return float(it["form"] * np.exp(it["log_scale"]) / it["norm2"])


def residual_norms(phi: Quasimode) -> dict:
    """||P phi||^2, ||P^* phi||^2 and <P phi, phi> for the normalized quasimode."""
    if phi.which == "m_under":
        return {"form": 0.0, "P_norm2": 0.0, "Pstar_norm2": 0.0}
    it = phi.integrals
    sc = np.exp(it["log_scale"]) / it["norm2"]
    return {"form": it["form"] * sc, "P_norm2": it["P_norm2"] * sc,
            "Pstar_norm2": it["Pstar_norm2"] * sc}


@dataclass
class InteractionResult:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    lam_tilde: float
    budget: dict

    def to_dict(self):
        return {"matrix": self.matrix.tolist(), "eigenvalues": self.eigenvalues.tolist(),
                "lam_tilde": self.lam_tilde, "budget": self.budget}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def interaction_eigenvalues(gram: np.ndarray, form: float, norms: dict, g_h: float) -> InteractionResult:
    """Surrogate interaction matrix diag(0, <P phi, phi>) with its error budget:
    relative correction g(h)^{-1} ||P phi|| (||P^* phi|| + ||P phi||) / lam and the
    Gram off-diagonal."""
    lam = float(form)
    M = np.array([[0.0, 0.0], [0.0, lam]])
    pn = np.sqrt(norms["P_norm2"])
    psn = np.sqrt(norms["Pstar_norm2"])
    rel = pn * (psn + pn) / (g_h * lam) if lam > 0 else float("inf")
    budget = {"relative_correction": float(rel), "P_norm": float(pn), "Pstar_norm": float(psn),
              "gram_offdiag": float(abs(gram[0, 1]))}
    return InteractionResult(matrix=M, eigenvalues=np.linalg.eigvalsh(M), lam_tilde=lam,
                             budget=budget)


def _edge_samples(geo: CutoffGeometry, phase: ExtendedPhase):
    """Points of C next to E inside {f <= f(s) + 4 delta}, with the sign of the E
    side. Each boundary cell is sampled at five y values across its fibre."""
    L = geo.labels
    X, Q = np.meshgrid(geo.xg, geo.qg, indexing="ij")
    level = geo.f_s + 4 * geo.delta
    f0 = phase.f(X, geo.v_of(X, Q), 0.0)
    C = (L == C_REG) & (f0 <= level)
    xs, vs, ys, sides = [], [], [], []
    for shift in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = np.roll(L, shift, axis=(0, 1))
        edge = C & ((nb == E_PLUS) | (nb == E_MINUS))
        if not edge.any():
            continue
        ii, jj = np.nonzero(edge)
        x = geo.xg[ii]
        v = geo.v_of(x, geo.qg[jj])
        ymax = 2 * np.sqrt(np.maximum(level - f0[ii, jj], 0.0))
        side = np.where(nb[ii, jj] == E_PLUS, 1.0, -1.0)
        for t in (-1.0, -0.5, 0.0, 0.5, 1.0):
            xs.append(x)
            vs.append(v)
            ys.append(t * ymax)
            sides.append(side)
    if not xs:
        return (np.zeros(0),) * 4
    return tuple(np.concatenate(a) for a in (xs, vs, ys, sides))


def edge_margin(geo: CutoffGeometry, phase: ExtendedPhase, eik: EikonalData) -> float:
    """min over the C/E interface of sign * ell0 / (2 tau).
    A value >= 1 means chi_ell equals +-1 there once h |ell1| is below the slack,
    so the jump of chi across the interface vanishes for small h."""
    x, v, y, side = _edge_samples(geo, phase)
    if x.size == 0:
        return float("inf")
    l0 = eik.ell0(np.stack([x - geo.s, v, y]))
    return float(np.min(side * l0) / (2 * geo.tau))


def choose_geometry(phase: ExtendedPhase, topo: DoubleWellTopology, eik: EikonalData,
                    tau: float | None = None, delta: float | None = None,
                    shrink: float = 0.85, n_tau: int = 20, n_delta: int = 8,
                    margin: float = 1.05, n: int = 801) -> CutoffGeometry:
    """Admissible cutoff geometry with the largest delta, then the largest tau.

    delta runs over S/8 * 2^-k (or the given value), tau over q(m_hat)/5 * shrink^j
    (or the given value). Admissible means the regions classify and the interface
    margin is at least `margin`, so chi_ell is continuous for small h.
    """
    t0, d0 = default_cutoffs(topo, eik)
    deltas = [delta] if delta is not None else [d0 * 0.5 ** k for k in range(n_delta)]
    taus = [tau] if tau is not None else [t0 * shrink ** j for j in range(n_tau)]
    last = None
    for d in deltas:
        for t in taus:
            try:
                geo = build_geometry(phase, topo, eik, t, d, n=n)
            except GeometryError as exc:
                last = exc
                continue
            mg = edge_margin(geo, phase, eik)
            if mg >= margin:
                return geo
            last = f"margin {mg:.3f} at tau={t:.4g}, delta={d:.4g}"
    raise GeometryError(f"no admissible (tau, delta) found; last: {last}")


def continuity_jump(q: Quasimode) -> float:
    """Largest jump of chi across the interface of C and E inside {f <= f(s) + 4 delta}."""
    geo = q.geom
    x, v, y, side = _edge_samples(geo, q.phase)
    if x.size == 0:
        return 0.0
    chi_c = primitive(q.eik.ell(q.h)(np.stack([x - geo.s, v, y])), geo.tau, q.h) / q.Ch
    return float(np.max(np.abs(chi_c - side)))


def laplace_norm(topo: DoubleWellTopology, m: str, h: float) -> float:
    """2 (pi h)^{3/4} D_m^{-1/2}."""
    return 2.0 * (np.pi * h) ** 0.75 * topo.D[m] ** -0.5


def interaction_report(phase: ExtendedPhase, topo: DoubleWellTopology, eik: EikonalData,
                       geo: CutoffGeometry, h: float, lam_ek: float | None = None) -> dict:
    """Everything the interaction step produces at one h, as a JSON-ready dict."""
    from .rates import rate_g
    qu = build_quasimode("m_under", topo, eik, geo, h, phase)
    qh = build_quasimode("m_hat", topo, eik, geo, h, phase)
    G = gram_matrix(qu, qh)
    rn = residual_norms(qh)
    res = interaction_eigenvalues(G, rn["form"], rn, rate_g(h, phase.gamma, phase.nu))
    out = {
        "h": h,
        "tau": geo.tau,
        "delta": geo.delta,
        "C_h": qh.Ch,
        "gram": G.tolist(),
        "rayleigh": rn["form"],
        "P_norm2": rn["P_norm2"],
        "Pstar_norm2": rn["Pstar_norm2"],
        "laplace_ratio": {"m_under": qu.norm / laplace_norm(topo, "m_under", h),
                          "m_hat": qh.norm / laplace_norm(topo, "m_hat", h)},
        "continuity_jump": continuity_jump(qh),
        "interaction": res.to_dict(),
        "quadrature": qh.to_dict()["quadrature"],
    }
    if lam_ek is not None:
        out["rayleigh_over_ek"] = rn["form"] / lam_ek
    return out

"""Tensor discretization of P = H0 + nu Y + gamma O for d = 1.

Ordering of unknowns is (x, v, y) with y fastest. The v and y factors use
Hermite modes of the h-scaled oscillator, so
    v = sqrt(h)(a + a^T),  h d_v = sqrt(h)/2 (a - a^T),  delta_v = sqrt(h) a,
and O = h diag(n) exactly. Products of ladder matrices are formed in a basis
enlarged by four modes and then truncated, which keeps Y exactly skew.

In x the grid is staggered by parity of the v-mode: even modes live on the
nodes x_j, odd modes on the half nodes x_j + dx/2. H0 only couples neighbouring
v-modes, so it always maps nodes to half nodes or back. The twisted derivative
delta_x = h d_x + V'/2 from nodes to half nodes is

    (D_e g)_j = (h/dx) (g_{j+1} e^{e_j} - g_j e^{-e_j}),  e_j = (V_{j+1} - V_j)/(4h),

which annihilates e^{-V/2h} exactly and is second-order accurate. D_o is the
same construction from half nodes to nodes. Then
    H0 = sqrt(h) sum_n sqrt(n+1) (|n+1><n| (x) D_{p(n)} - |n><n+1| (x) D_{p(n)}^T)
is exactly skew, e^{-f/h} is exactly in its kernel, and the centered-difference
odd-even null mode is absent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DomainTooSmallError, ParameterError
from .potential import ExtendedPhase, Potential

DECAY_TOL = 1e-14


def ladder(n: int) -> sp.csr_matrix:
    """Annihilation matrix: a[k-1, k] = sqrt(k)."""
    return sp.diags(np.sqrt(np.arange(1, n)), 1, shape=(n, n), format="csr")


def hermite_factors(n: int, h: float, extra: int = 4) -> dict:
    """Ladder-built one-dimensional factors, truncated from an n+extra basis."""
    m = n + extra
    a = ladder(m)
    ad = a.T.tocsr()
    sh = np.sqrt(h)
    q = sh * (a + ad)
    dq = 0.5 * sh * (a - ad)
    T = lambda M: sp.csr_matrix(M.tocsr()[:n, :n])
    return {
        "q": T(q),
        "hd": T(dq),
        "q2": T(q @ q),
        "q3": T(q @ q @ q),
        "S": T(0.5 * (dq @ q + q @ dq)),
        "delta": T(sh * a),
        "a": T(a),
    }


@dataclass(frozen=True)
class BasisDescriptor:
    L: float
    Nx: int
    Nv: int
    Ny: int
    h: float
    center: float = 0.0

    @property
    def x(self):
        return np.linspace(self.center - self.L, self.center + self.L, self.Nx)

    @property
    def dx(self):
        return 2.0 * self.L / (self.Nx - 1)

    @property
    def xh(self):
        return self.x + 0.5 * self.dx

    @property
    def N(self):
        return self.Nx * self.Nv * self.Ny

    def flat(self, ix, iv, iy):
        return (np.asarray(ix) * self.Nv + np.asarray(iv)) * self.Ny + np.asarray(iy)

    def tensor(self, k):
        k = np.asarray(k)
        iy = k % self.Ny
        iv = (k // self.Ny) % self.Nv
        ix = k // (self.Ny * self.Nv)
        return ix, iv, iy

    def x_of_mode(self, iv: int):
        """Grid carrying v-mode iv (nodes for even, half nodes for odd)."""
        return self.x if iv % 2 == 0 else self.xh

    def to_dict(self):
        return {"L": self.L, "Nx": self.Nx, "Nv": self.Nv, "Ny": self.Ny, "h": self.h,
                "center": self.center, "N": self.N, "dx": self.dx,
                "scheme": "staggered-sqra-fd2"}


def boundary_decay(V: Potential, h: float, L: float, center: float = 0.0, n: int = 2001):
    xs = np.linspace(center - L, center + L, n)
    vmin = float(np.min(V(xs)))
    return float(np.exp(-(min(V(center - L), V(center + L)) - vmin) / (2 * h)))


def default_L(V: Potential, h: float, topo=None, center: float = 0.0) -> float:
    """Smallest L (step 0.05) whose kernel decays below 0.1*DECAY_TOL at the ends,
    and at least 1.25 times the distance to the outer minimum."""
    outer = 1.0
    if topo is not None:
        outer = max(abs(topo.m_under.x - center), abs(topo.m_hat.x - center))
    L = 1.25 * outer
    while boundary_decay(V, h, L, center) > 0.1 * DECAY_TOL:
        L += 0.05
        if L > 100:
            raise DomainTooSmallError("potential does not confine")
    return round(L, 2)


def build_basis(V: Potential, h: float, L: float | None = None, Nx: int = 129,
                Nv: int = 16, Ny: int = 16, center: float = 0.0, topo=None,
                check: bool = True) -> BasisDescriptor:
    if h <= 0:
        raise ParameterError("h must be positive")
    if Nv < 4 or Ny < 4 or Nx < 8:
        raise ParameterError("need Nv, Ny >= 4 and Nx >= 8")
    if L is None:
        L = default_L(V, h, topo, center)
    if L <= 0:
        raise ParameterError("L must be positive")
    if check:
        dec = boundary_decay(V, h, L, center)
        if dec >= DECAY_TOL:
            raise DomainTooSmallError(
                f"domain too small: e^(-f/h) at the x-boundary is {dec:.2e} of its max")
    return BasisDescriptor(L=float(L), Nx=int(Nx), Nv=int(Nv), Ny=int(Ny), h=float(h),
                           center=float(center))


def twisted_dx(V: Potential, basis: BasisDescriptor):
    """(D_e, D_o): delta_x from nodes to half nodes and from half nodes to nodes."""
    x, h, dx, n = basis.x, basis.h, basis.dx, basis.Nx
    e = (V(x + dx) - V(x)) / (4 * h)
    De = sp.diags([-np.exp(-e), np.exp(e[:-1])], [0, 1], shape=(n, n))
    et = (V(x + 0.5 * dx) - V(x - 0.5 * dx)) / (4 * h)
    Do = sp.diags([np.exp(et), -np.exp(-et[1:])], [0, -1], shape=(n, n))
    c = h / dx
    return (c * De).tocsr(), (c * Do).tocsr()


def witten_direct(V: Potential, basis: BasisDescriptor):
    """-h^2 d_xx + V'^2/4 - h V''/2 by three-point differences on the nodes."""
    x, h, dx, n = basis.x, basis.h, basis.dx, basis.Nx
    D2 = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / dx ** 2
    return (-h * h * D2 + sp.diags(V.grad(x) ** 2 / 4 - h * V.hess(x) / 2)).tocsr()


def kron3(X, Vf, Yf):
    return sp.kron(sp.kron(X, Vf, format="csr"), Yf, format="csr")


@dataclass
class OperatorAssembly:
    basis: BasisDescriptor
    gamma: float
    nu: float
    h: float
    P: sp.csr_matrix
    H0: sp.csr_matrix
    Y: sp.csr_matrix
    O: sp.csr_matrix
    Z: sp.csr_matrix
    Pi: sp.csr_matrix
    E: sp.csr_matrix
    De: sp.csr_matrix
    Do: sp.csr_matrix
    delta_v: sp.csr_matrix
    delta_y: sp.csr_matrix
    Delta: sp.csr_matrix
    Delta_direct: sp.csr_matrix
    Ny_op: sp.csr_matrix
    B: sp.csr_matrix
    kernel: np.ndarray
    vf: dict = field(repr=False, default_factory=dict)
    yf: dict = field(repr=False, default_factory=dict)
    potential: object = field(repr=False, default=None)

    @property
    def N(self):
        return self.basis.N

    @property
    def gradV_half_to_node(self):
        """Multiplication by V' from half nodes to nodes, as delta_x + delta_x^*."""
        return (self.Do + self.De.T).tocsr()

    @property
    def gradV_node_to_half(self):
        return (self.De + self.Do.T).tocsr()

    def lift(self, Mxy):
        """Embed an operator on the (x, y) factor into the v ground-state sector."""
        return (self.E @ sp.csr_matrix(Mxy) @ self.E.T).tocsr()

    def kernel_residual(self):
        k = self.kernel
        return float(np.linalg.norm(self.P @ k) / np.linalg.norm(k))


def assemble(phase: ExtendedPhase, basis: BasisDescriptor) -> OperatorAssembly:
    h, g, nu = basis.h, phase.gamma, phase.nu
    Nx, Nv, Ny = basis.Nx, basis.Nv, basis.Ny
    V = phase.V
    De, Do = twisted_dx(V, basis)
    vf = hermite_factors(Nv, h)
    yf = hermite_factors(Ny, h)
    Ix, Iv, Iy = sp.identity(Nx, format="csr"), sp.identity(Nv, format="csr"), sp.identity(Ny, format="csr")

    n = np.arange(Nv - 1)
    r = np.sqrt(n + 1.0)
    Ae = sp.csr_matrix((np.where(n % 2 == 0, r, 0.0), (n + 1, n)), shape=(Nv, Nv))
    Ao = sp.csr_matrix((np.where(n % 2 == 1, r, 0.0), (n + 1, n)), shape=(Nv, Nv))
    Ae.eliminate_zeros()
    Ao.eliminate_zeros()
    H0 = np.sqrt(h) * (kron3(De, Ae, Iy) + kron3(Do, Ao, Iy)
                       - kron3(De.T, Ae.T, Iy) - kron3(Do.T, Ao.T, Iy))
    Y = kron3(Ix, vf["q2"] - h * Iv, yf["hd"]) - kron3(Ix, vf["S"], yf["q"])
    O = kron3(Ix, sp.diags(h * np.arange(Nv)), Iy)
    Z = (H0 + nu * Y).tocsr()
    P = (Z + g * O).tocsr()

    e0 = sp.csr_matrix(([1.0], ([0], [0])), shape=(Nv, 1))
    E = sp.kron(sp.kron(Ix, e0), Iy, format="csr")
    Pi = (E @ E.T).tocsr()
    Delta = (De.T @ De).tocsr()
    Ny_op = (yf["delta"].T @ yf["delta"]).tocsr()
    B = (sp.kron(Delta, Iy) + 2 * nu * nu * h * sp.kron(Ix, Ny_op)).tocsr()

    asm = OperatorAssembly(
        basis=basis, gamma=g, nu=nu, h=h, P=P, H0=H0.tocsr(), Y=Y.tocsr(), O=O.tocsr(),
        Z=Z, Pi=Pi, E=E, De=De, Do=Do,
        delta_v=kron3(Ix, vf["delta"], Iy), delta_y=kron3(Ix, Iv, yf["delta"]),
        Delta=Delta, Delta_direct=witten_direct(V, basis), Ny_op=Ny_op, B=B,
        kernel=np.zeros(basis.N), vf=vf, yf=yf, potential=V)
    asm.kernel = kernel_vector(phase, basis)
    return asm


def kernel_vector(phase: ExtendedPhase, basis: BasisDescriptor, h: float | None = None):
    """Normalized e^{-f/h} on the grid: g(x) on the nodes times the v, y ground states."""
    h = basis.h if h is None else h
    Vx = phase.V(basis.x)
    gx = np.exp(-(Vx - Vx.min()) / (2 * h))
    ev = np.zeros(basis.Nv)
    ev[0] = 1.0
    ey = np.zeros(basis.Ny)
    ey[0] = 1.0
    k = np.kron(np.kron(gx, ev), ey)
    return k / np.linalg.norm(k)


def _rel(A, B):
    d = sp.linalg.norm(A - B) if sp.issparse(A) else np.linalg.norm(A - B)
    s = sp.linalg.norm(A) if sp.issparse(A) else np.linalg.norm(A)
    return float(d / s) if s > 0 else float(d)


def lemma23_residual(asm: OperatorAssembly) -> float:
    """|| (Z Pi)^T (Z Pi) - h B Pi || / || h B Pi || (Frobenius)."""
    ZP = asm.Z @ asm.Pi
    return _rel((ZP.T @ ZP).tocsr(), asm.h * asm.lift(asm.B))


def product_identities(asm: OperatorAssembly) -> dict:
    """Relative Frobenius errors of the four product identities on Ran Pi."""
    h, Pi = asm.h, asm.Pi
    b = asm.basis
    Ix, Iv, Iy = (sp.identity(k, format="csr") for k in (b.Nx, b.Nv, b.Ny))
    vf, yf = asm.vf, asm.yf
    De, Do = asm.De, asm.Do
    v, v2, v3 = vf["q"], vf["q2"], vf["q3"]
    w = (v2 - h * Iv).tocsr()
    dy, yq = yf["delta"], yf["q"]
    H0, Y = asm.H0, asm.Y
    out = {}
    lhs = H0.T @ H0 @ Pi
    rhs = (-kron3(Do @ De, v2, Iy) + h * kron3(asm.gradV_half_to_node @ De, Iv, Iy)) @ Pi
    out["prod1"] = _rel(lhs, rhs)
    lhs = Y.T @ Y @ Pi
    rhs = (kron3(Ix, w @ w, dy.T @ dy) - kron3(Ix, w @ w - 2 * h * v2, yq @ dy)) @ Pi
    out["prod2"] = _rel(lhs, rhs)
    vw = (v3 - h * v).tocsr()
    lhs = H0.T @ Y @ Pi
    rhs = (-kron3(De, vw, dy) + 2 * h * kron3(asm.gradV_node_to_half, v, dy)) @ Pi
    out["prod3"] = _rel(lhs, rhs)
    lhs = Y.T @ H0 @ Pi
    rhs = (-kron3(De, vw, dy) + h * kron3(De, v, yq)) @ Pi
    out["prod4"] = _rel(lhs, rhs)
    return out


def structure_checks(asm: OperatorAssembly) -> dict:
    """Matrix-level invariants of the assembly (all should be at roundoff)."""
    Pi, Z = asm.Pi, asm.Z
    r = {}
    r["P_split"] = _rel(asm.P, asm.H0 + asm.nu * asm.Y + asm.gamma * asm.O)
    r["Pi_idem"] = float(sp.linalg.norm(Pi @ Pi - Pi))
    r["Pi_sym"] = float(sp.linalg.norm(Pi - Pi.T))
    r["O_Pi"] = float(sp.linalg.norm(asm.O @ Pi))
    r["PiZPi"] = float(sp.linalg.norm(Pi @ Z @ Pi))
    r["H0_skew"] = float(sp.linalg.norm(asm.H0 + asm.H0.T))
    r["Y_skew"] = float(sp.linalg.norm(asm.Y + asm.Y.T))
    r["O_factored"] = _rel(asm.O, asm.delta_v.T @ asm.delta_v)
    r["kernel"] = asm.kernel_residual()
    return r


def witten_consistency(asm: OperatorAssembly, V: Potential, x0: float) -> float:
    """Relative gap between delta_x^* delta_x and the direct Witten form on a
    Gaussian of width sqrt(h) centred at x0 (a discretization-error probe)."""
    x, h = asm.basis.x, asm.h
    u = np.exp(-((x - x0) ** 2) / (2 * h))
    a = asm.Delta @ u
    b = asm.Delta_direct @ u
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def write_coo(path, M, name="P"):
    """Coordinate-list text: a header line '# coo <name> <rows> <cols> <nnz>' then
    one 'row col value' line per stored entry (0-based, value in repr form)."""
    M = sp.coo_matrix(M)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# coo {name} {M.shape[0]} {M.shape[1]} {M.nnz}\n")
        for i, j, a in zip(M.row, M.col, M.data):
            fh.write(f"{i} {j} {float(a)!r}\n")


def read_coo(path):
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        nr, nc = int(head[3]), int(head[4])
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((nr, nc))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=(nr, nc))

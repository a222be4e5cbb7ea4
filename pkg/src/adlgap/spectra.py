"""Small eigenvalues of the discretized P and resolvent probes."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, SingularityError
from .operator import OperatorAssembly
from .rates import rate_g

DENSE_BELOW = 4000


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray          # sorted by real part, kernel excluded
    residuals: np.ndarray
    kernel_eigenvalue: complex
    kernel_residual: float
    diagnostics: dict = field(default_factory=dict)
    resolution: dict = field(default_factory=dict)
    vectors: np.ndarray | None = field(default=None, repr=False)
    deflation: np.ndarray | None = field(default=None, repr=False)

    @property
    def smallest(self) -> complex:
        return self.eigenvalues[np.argmin(np.abs(self.eigenvalues))]

    def to_dict(self):
        return {
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "residuals": [float(r) for r in self.residuals],
            "kernel_eigenvalue": [float(np.real(self.kernel_eigenvalue)),
                                  float(np.imag(self.kernel_eigenvalue))],
            "kernel_residual": float(self.kernel_residual),
            "diagnostics": self.diagnostics,
            "resolution": self.resolution,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _orthonormal(vecs, tol=1e-10):
    K = np.atleast_2d(np.asarray(vecs, float))
    if K.shape[0] != 1 and K.ndim == 2 and K.shape[1] == 1:
        K = K.T
    Q, R = np.linalg.qr(K.T)
    keep = np.abs(np.diag(R)) > tol * max(1.0, np.abs(R).max())
    return Q[:, keep]


def _residuals(P, lam, U):
    out = []
    for j in range(U.shape[1]):
        u = U[:, j]
        out.append(np.linalg.norm(P @ u - lam[j] * u) / np.linalg.norm(u))
    return np.array(out)


def deflated_smallest(asm: OperatorAssembly, k: int = 4, deflation=None,
                      dense_below: int = DENSE_BELOW, maxiter: int | None = None,
                      tol: float = 0.0, return_vectors: bool = False) -> SpectralReport:
    """k eigenvalues of smallest modulus on the complement of the numerical kernel.

    Shift-invert at 0 is done on the bordered matrix [[P, K], [K^T, 0]] whose
    leading block inverse acts as P^{-1} on the complement of K and kills K.
    K is both a left and right null space of P here, so eigenvectors of the
    other eigenvalues are unaffected.
    """
    P = asm.P
    N = P.shape[0]
    K = _orthonormal(asm.kernel if deflation is None else deflation)
    kres = float(max(np.linalg.norm(P @ K[:, j]) for j in range(K.shape[1])))
    diag = {"k": k, "shift": 0.0, "n_deflation": int(K.shape[1])}
    if N < dense_below:
        w, U = sla.eig(P.toarray())
        ov = np.linalg.norm(K.T @ U, axis=0) / np.linalg.norm(U, axis=0)
        drop = np.argsort(-ov)[:K.shape[1]]
        kept = np.setdiff1d(np.arange(N), drop)
        w, U = w[kept], U[:, kept]
        order = np.argsort(np.abs(w))[:k]
        lam, vecs = w[order], U[:, order]
        diag["method"] = "dense"
    else:
        m = K.shape[1]
        Bd = sp.bmat([[P, sp.csr_matrix(K)], [sp.csr_matrix(K.T), None]], format="csc")
        try:
            lu = spla.splu(Bd)
        except RuntimeError as exc:
            raise SingularityError(f"factorization failed at shift 0: {exc}; try a nonzero shift") from exc
        z = np.zeros(m)

        def mv(x):
            return lu.solve(np.concatenate([x, z]))[:N]

        T = spla.LinearOperator((N, N), matvec=mv, dtype=float)
        ncv = min(N - 1, max(2 * k + 1, 20))
        try:
            th, vecs = spla.eigs(T, k=k, which="LM", ncv=ncv, tol=tol,
                                 maxiter=maxiter or 10 * N)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError("shift-invert Arnoldi did not converge",
                                   partial=1.0 / exc.eigenvalues) from exc
        lam = 1.0 / th
        order = np.argsort(np.abs(lam))
        lam, vecs = lam[order], vecs[:, order]
        diag["method"] = "shift-invert-arnoldi"
        diag["ncv"] = ncv
    # kernel Rayleigh quotient
    kern_eig = complex(K[:, 0] @ (P @ K[:, 0]))
    res = _residuals(P, lam, vecs)
    order = np.lexsort((lam.imag, lam.real))
    return SpectralReport(eigenvalues=lam[order], residuals=res[order],
                          kernel_eigenvalue=kern_eig, kernel_residual=kres,
                          diagnostics=diag, resolution=asm.basis.to_dict(),
                          vectors=vecs[:, order] if return_vectors else None,
                          deflation=K)


def census(eigs, window: float) -> list:
    """Eigenvalues with real part <= window."""
    return [z for z in eigs if z.real <= window]


def fit_window(eigs_nonzero, g: float) -> float:
    """c0 placing the window {Re z <= c0 g} at the geometric middle of the gap
    between the smallest nonzero eigenvalue and the next real part."""
    re = np.sort(np.abs(np.real(eigs_nonzero)))
    return float(np.sqrt(re[0] * re[1]) / g)


def _normest(P):
    return float(spla.norm(P, 1))


def resolvent_norm_probe(asm: OperatorAssembly, z: complex, samples: int = 4,
                         iters: int = 30, seed: int = 0, sing_tol: float = 1e-10) -> float:
    """Certified lower bound for ||(P - z)^{-1}|| by randomized power iteration on
    T^H T with T = (P - z)^{-1}. Every iterate x gives ||T x||/||x|| <= ||T||."""
    P = asm.P
    N = P.shape[0]
    M = (P - z * sp.identity(N)).tocsc().astype(complex)
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise SingularityError(f"(P - z) is singular at z={z}") from exc
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(samples):
        x = rng.normal(size=N) + 1j * rng.normal(size=N)
        x /= np.linalg.norm(x)
        for _ in range(iters):
            y = lu.solve(x)
            ny = np.linalg.norm(y)
            if not np.isfinite(ny):
                raise SingularityError(f"(P - z) is numerically singular at z={z}")
            best = max(best, ny)
            x = lu.solve(y, trans="H")
            x /= np.linalg.norm(x)
    if 1.0 / best < sing_tol * _normest(P):
        raise SingularityError(f"z={z} is numerically an eigenvalue (||T|| >= {best:.3e})")
    return float(best)


@dataclass
class WittenGap:
    eigenvalues: np.ndarray
    gap: float
    normalized_gap: float

    def to_dict(self):
        return {"eigenvalues": self.eigenvalues.tolist(), "gap": self.gap,
                "normalized_gap": self.normalized_gap}


def witten_gap(asm: OperatorAssembly, k: int = 5, dense_below: int = DENSE_BELOW) -> WittenGap:
    """Lowest eigenvalues of B = Delta + 2 nu^2 h N_y and the third one as the gap."""
    B = asm.B
    n = B.shape[0]
    if n < dense_below:
        ev = sla.eigh(B.toarray(), eigvals_only=True, subset_by_index=[0, k - 1])
    else:
        sigma = -1e-3 * asm.h * min(1.0, asm.nu ** 2 * asm.h)
        try:
            ev = spla.eigsh(B, k=k, sigma=sigma, which="LM", return_eigenvectors=False)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError("Lanczos did not converge", partial=exc.eigenvalues) from exc
        ev = np.sort(ev)
    h = asm.h
    gap = float(ev[2])
    return WittenGap(eigenvalues=np.asarray(ev), gap=gap,
                     normalized_gap=gap / (h * min(1.0, asm.nu ** 2 * h)))


def window_value(c0: float, h: float, gamma: float, nu: float) -> float:
    return c0 * rate_g(h, gamma, nu)

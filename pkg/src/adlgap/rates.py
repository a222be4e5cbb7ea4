"""Closed-form rate predictions: saddle rate, hypocoercive scale, Eyring-Kramers value."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError, TopologyError


def mu_of_saddle(gamma: float, eta: float) -> float:
    """Positive root of mu^2 + gamma mu - eta = 0."""
    if not (gamma > 0 and eta > 0):
        raise ParameterError("gamma and eta must be positive")
    # rationalized form avoids cancellation when eta << gamma^2
    return 2.0 * eta / (gamma + np.sqrt(gamma * gamma + 4.0 * eta))


def rate_g(h: float, gamma: float, nu: float) -> float:
    if not (h > 0 and gamma > 0 and nu > 0):
        raise ParameterError("h, gamma, nu must be positive")
    n2h = nu * nu * h
    return h * min(n2h * gamma, 1.0 / gamma, gamma / n2h, n2h / gamma)


@dataclass(frozen=True)
class RatePrediction:
    mu: float
    prefactor: float
    lam: float
    h: float
    gamma: float
    eta: float
    S: float
    det_m_hat: float
    det_s: float

    def at(self, h: float) -> float:
        return self.prefactor * h * np.exp(-self.S / h)

    def to_dict(self):
        return asdict(self)


def eyring_kramers_rate(topo, gamma: float, h: float) -> RatePrediction:
    """Leading Eyring-Kramers term, no (1 + O(sqrt h)) correction."""
    if h <= 0:
        raise ParameterError("h must be positive")
    s = topo.s
    if s is None or s.eta is None or not s.hess_eigs:
        raise TopologyError("saddle Hessian missing")
    eta = float(s.eta)
    det_m = float(np.prod(topo.m_hat.hess_eigs))
    det_s = float(np.prod(s.hess_eigs))
    mu = mu_of_saddle(gamma, eta)
    pref = mu * np.sqrt(det_m) / (2.0 * np.pi * np.sqrt(abs(det_s)))
    lam = pref * h * np.exp(-topo.S / h)
    return RatePrediction(mu=mu, prefactor=pref, lam=lam, h=h, gamma=gamma, eta=eta,
                          S=topo.S, det_m_hat=det_m, det_s=det_s)

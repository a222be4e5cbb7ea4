"""Adaptive Langevin SDE: simulation, equilibrium moments and transition times.

    dx = v dt
    dv = (-V'(x) - nu y v - gamma v) dt + sqrt(2 gamma h) dB
    dy = nu (v^2 - h) dt

Strang splitting per step: y half, kick half, drift half, OU step for v with the
friction gamma + nu y frozen, drift half, kick half, y half. When the frozen
friction is not positive the v step is Euler-Maruyama and the event is counted.

Each walker owns a Philox stream spawned from one SeedSequence, and normals are
drawn in fixed-size blocks per walker, so results do not depend on how walkers
are batched.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InstabilityError, PartialResultsError
from .potential import DoubleWellTopology, Potential

BLOCK = 512


@dataclass
class SdeConfig:
    potential: Potential = field(repr=False)
    gamma: float
    nu: float
    h: float
    dt: float
    T: float
    seed: int = 0
    n_walkers: int = 64
    burn_in: float = 0.0
    r_core: float | None = None
    x0: float = 0.0
    guard: float = 1e6
    stiff_bound: float = 0.1

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ConfigError("dt and T must be positive")
        if self.gamma < 0 or self.nu < 0 or not self.h > 0:
            raise ConfigError("need gamma >= 0, nu >= 0, h > 0")
        if self.n_walkers < 1:
            raise ConfigError("n_walkers must be at least 1")
        w = np.sqrt(max_curvature(self.potential))
        if self.dt * w > self.stiff_bound:
            raise ConfigError(f"dt={self.dt} violates dt*sqrt(max|V''|) <= {self.stiff_bound} "
                              f"(sqrt(max|V''|)={w:.4g})")

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "potential"}
        d["potential"] = self.potential.to_dict()
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True, default=str).encode()).hexdigest()


def max_curvature(V: Potential, n: int = 4001) -> float:
    xs = np.linspace(V.box[0], V.box[1], n)
    return float(np.max(np.abs(V.hess(xs))))


class _Streams:
    """Per-walker Philox streams with block buffering."""

    def __init__(self, seed: int, n: int, width: int):
        ss = np.random.SeedSequence(seed)
        self.gens = [np.random.Generator(np.random.Philox(s)) for s in ss.spawn(n)]
        self.width = width
        self.buf = np.empty((n, BLOCK, width))
        self.pos = BLOCK

    def next(self):
        if self.pos == BLOCK:
            for i, g in enumerate(self.gens):
                self.buf[i] = g.standard_normal((BLOCK, self.width))
            self.pos = 0
        out = self.buf[:, self.pos, :]
        self.pos += 1
        return out


class _Integrator:
    def __init__(self, cfg: SdeConfig):
        self.cfg = cfg
        self.dV = cfg.potential.grad
        self.euler_events = 0

    def step(self, x, v, y, xi):
        c = self.cfg
        dt, g, nu, h = c.dt, c.gamma, c.nu, c.h
        y = y + 0.5 * dt * nu * (v * v - h)
        v = v - 0.5 * dt * self.dV(x)
        x = x + 0.5 * dt * v
        kap = g + nu * y
        pos = kap > 1e-14
        self.euler_events += int(np.count_nonzero(~pos))
        kp = np.where(pos, kap, 1.0)
        e = np.exp(-kp * dt)
        sd = np.sqrt(g * h * (1 - e * e) / kp)
        v_ou = e * v + sd * xi
        v_eu = v - kap * v * dt + np.sqrt(2 * g * h * dt) * xi
        v = np.where(pos, v_ou, v_eu)
        x = x + 0.5 * dt * v
        v = v - 0.5 * dt * self.dV(x)
        y = y + 0.5 * dt * nu * (v * v - h)
        if not np.all(np.isfinite(x)) or np.max(np.abs(np.concatenate([x, v, y]))) > c.guard:
            raise InstabilityError(f"trajectory blew up with dt={dt}")
        return x, v, y


def _initial(cfg: SdeConfig, streams: _Streams, x0):
    z = streams.next()
    sh = np.sqrt(cfg.h)
    return np.full(len(streams.gens), float(x0)), sh * z[:, 0], sh * z[:, 1]


@dataclass
class TrajectoryStats:
    moments: dict = field(default_factory=dict)
    times: np.ndarray | None = None
    mean: float = float("nan")
    se: float = float("nan")
    count: int = 0
    euler_events: int = 0
    steps: int = 0
    histograms: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"moments": self.moments, "mean": self.mean, "se": self.se, "count": self.count,
             "euler_events": self.euler_events, "steps": self.steps,
             "histograms": self.histograms, "config": self.config}
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, default=float, **kw)


def simulate(cfg: SdeConfig, keep_path: bool = False):
    """Run n_walkers trajectories to time T and accumulate moments after burn_in.

    Standard errors use the spread of per-walker time averages, which are
    independent across walkers. Returns TrajectoryStats, and also the path of
    walker 0 when keep_path is set.
    """
    streams = _Streams(cfg.seed, cfg.n_walkers, 2)
    integ = _Integrator(cfg)
    x, v, y = _initial(cfg, streams, cfg.x0)
    nsteps = int(round(cfg.T / cfg.dt))
    nburn = int(round(cfg.burn_in / cfg.dt))
    if nsteps <= nburn:
        raise ConfigError("T must exceed burn_in")
    acc = {k: np.zeros(cfg.n_walkers) for k in ("v", "v2", "y", "y2", "x")}
    edges_v = np.linspace(-5, 5, 41) * np.sqrt(cfg.h)
    hv = np.zeros(len(edges_v) - 1)
    hy = np.zeros(len(edges_v) - 1)
    path = [] if keep_path else None
    for n in range(nsteps):
        x, v, y = integ.step(x, v, y, streams.next()[:, 0])
        if keep_path:
            path.append((x[0], v[0], y[0]))
        if n >= nburn:
            acc["v"] += v
            acc["v2"] += v * v
            acc["y"] += y
            acc["y2"] += y * y
            acc["x"] += x
            if (n - nburn) % 10 == 0:
                hv += np.histogram(v, edges_v)[0]
                hy += np.histogram(y, edges_v)[0]
    m = nsteps - nburn
    mom = {}
    for name in ("v", "y"):
        mu_w = acc[name] / m
        var_w = acc[name + "2"] / m - mu_w ** 2
        W = cfg.n_walkers
        mom[f"mean_{name}"] = float(mu_w.mean())
        mom[f"mean_{name}_se"] = float(mu_w.std(ddof=1) / np.sqrt(W)) if W > 1 else float("nan")
        mom[f"var_{name}"] = float(var_w.mean())
        mom[f"var_{name}_se"] = float(var_w.std(ddof=1) / np.sqrt(W)) if W > 1 else float("nan")
    mom["mean_x"] = float((acc["x"] / m).mean())
    st = TrajectoryStats(moments=mom, euler_events=integ.euler_events, steps=nsteps,
                         histograms={"edges": edges_v.tolist(), "v": hv.tolist(), "y": hy.tolist()},
                         config=cfg.to_dict())
    if keep_path:
        return st, np.array(path)
    return st


def core_radius(topo: DoubleWellTopology, factor: float = 0.2) -> float:
    return factor * min(abs(topo.m_hat.x - topo.s.x), abs(topo.m_under.x - topo.s.x))


def transition_times(cfg: SdeConfig, topo: DoubleWellTopology, n_transitions: int,
                     max_steps: int | None = None) -> TrajectoryStats:
    """First hitting times of the m_under core set starting from m_hat.

    Walkers start at m_hat with v, y drawn from N(0, h); after each hit the walker
    restarts the same way. Every walker contributes the same number of times,
    ceil(n_transitions / n_walkers), so the sample is not biased toward short
    passages by stopping at the first n hits overall. The horizon is T (per
    walker), or max_steps if given.
    """
    r = cfg.r_core if cfg.r_core is not None else core_radius(topo)
    a, b = topo.m_hat.x, topo.m_under.x
    W = cfg.n_walkers
    quota = -(-n_transitions // W)
    streams = _Streams(cfg.seed, W, 2)
    integ = _Integrator(cfg)
    x, v, y = _initial(cfg, streams, a)
    t0 = np.zeros(W)
    got = np.zeros(W, dtype=int)
    per = [[] for _ in range(W)]
    nmax = max_steps if max_steps is not None else int(round(cfg.T / cfg.dt))
    n = 0
    sh = np.sqrt(cfg.h)
    while got.min() < quota and n < nmax:
        x, v, y = integ.step(x, v, y, streams.next()[:, 0])
        n += 1
        hit = np.abs(x - b) < r
        if hit.any():
            t = n * cfg.dt
            for i in np.nonzero(hit)[0]:
                if got[i] < quota:
                    per[i].append(t - t0[i])
                    got[i] += 1
                # restart at m_hat with equilibrium v, y from the walker's own stream
                z = streams.gens[i].standard_normal(2)
                x[i], v[i], y[i] = a, sh * z[0], sh * z[1]
                t0[i] = t
    times = np.array([t for lst in per for t in lst])
    st = TrajectoryStats(times=times, count=len(times), euler_events=integ.euler_events, steps=n,
                         config={**cfg.to_dict(), "r_core": r, "quota": quota})
    if len(times):
        st.mean = float(times.mean())
        st.se = float(times.std(ddof=1) / np.sqrt(len(times))) if len(times) > 1 else float("nan")
    if got.min() < quota:
        raise PartialResultsError(f"horizon exhausted with {len(times)} transitions "
                                  f"({int((got >= quota).sum())} of {W} walkers complete)",
                                  samples=st)
    return st


def write_times_csv(path, stats: TrajectoryStats, cfg: SdeConfig):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_sha256={cfg.digest()}\n")
        w = csv.writer(fh)
        w.writerow(["time"])
        for t in stats.times:
            w.writerow([repr(float(t))])


def write_moments_json(path, stats: TrajectoryStats):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(stats.to_json(indent=2))

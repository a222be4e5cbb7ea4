import json

import numpy as np
import pytest

from adlgap.errors import ConfigError, InstabilityError, PartialResultsError
from adlgap.potential import double_well, preset, quartic
from adlgap.sde import (SdeConfig, max_curvature, simulate, transition_times, write_moments_json,
                        write_times_csv)

HARMONIC = quartic(0.0, 0.0, 0.5, 0.0, box=(-4.0, 4.0))


def _cfg(**kw):
    base = dict(potential=HARMONIC, gamma=1.0, nu=1.0, h=0.2, dt=0.01, T=50.0, n_walkers=8)
    base.update(kw)
    return SdeConfig(**base)


def test_seed_determinism():
    a = simulate(_cfg(seed=5))
    b = simulate(_cfg(seed=5))
    c = simulate(_cfg(seed=6))
    assert a.to_json() == b.to_json()
    assert a.moments != c.moments


def test_batching_invariance():
    _, p1 = simulate(_cfg(n_walkers=1, T=20.0, seed=2), keep_path=True)
    _, p3 = simulate(_cfg(n_walkers=3, T=20.0, seed=2), keep_path=True)
    np.testing.assert_array_equal(p1, p3)


@pytest.fixture(scope="module")
def equilibrium():
    return simulate(_cfg(T=400.0, burn_in=20.0, n_walkers=64, seed=1))


def test_equilibrium_moments(equilibrium):
    m, h = equilibrium.moments, 0.2
    assert abs(m["var_v"] - h) < 3 * m["var_v_se"] + 2e-3
    assert abs(m["var_y"] - h) < 3 * m["var_y_se"] + 2e-3
    assert abs(m["mean_y"]) < 3 * m["mean_y_se"]
    assert abs(m["mean_v"]) < 3 * m["mean_v_se"] + 1e-3


def test_halving_dt_within_mc_error(equilibrium):
    fine = simulate(_cfg(T=400.0, burn_in=20.0, n_walkers=64, seed=1, dt=0.005))
    for k in ("var_v", "var_y"):
        se = np.hypot(equilibrium.moments[k + "_se"], fine.moments[k + "_se"])
        assert abs(equilibrium.moments[k] - fine.moments[k]) < 3 * se + 2e-3


def test_energy_conserved_without_noise():
    cfg = _cfg(gamma=0.0, nu=0.0, n_walkers=1, T=100.0, x0=1.0)
    _, path = simulate(cfg, keep_path=True)
    x, v, y = path.T
    E = 0.5 * v ** 2 + HARMONIC(x)
    assert np.ptp(E) < 1e-3 * E.mean()
    assert np.ptp(y) == 0.0


def test_stability_guard():
    V = preset("tilted_quartic")
    w = np.sqrt(max_curvature(V))
    with pytest.raises(ConfigError, match="dt="):
        SdeConfig(V, 1.0, 1.0, 0.2, dt=0.2 / w, T=1.0)
    with pytest.raises(ConfigError):
        SdeConfig(V, -1.0, 1.0, 0.2, dt=0.01, T=1.0)


def test_instability_error():
    cfg = _cfg(stiff_bound=10.0, dt=3.0, T=300.0, guard=1e3, x0=1.0)
    with pytest.raises(InstabilityError):
        simulate(cfg)


@pytest.fixture(scope="module")
def transitions():
    V = preset("tilted_quartic")
    topo = double_well(V)
    out = {}
    for h in (0.4, 0.25):
        cfg = SdeConfig(V, 1.0, 1.0, h, dt=0.01, T=1e5, n_walkers=50, seed=0)
        out[h] = (cfg, transition_times(cfg, topo, 200))
    return topo, out


def test_mean_times_increase_as_h_decreases(transitions):
    _, out = transitions
    assert out[0.25][1].mean > out[0.4][1].mean
    for cfg, st in out.values():
        assert st.count == 200
        assert st.config["quota"] == 4
        assert np.all(st.times > 0)


def test_partial_results_carry_samples():
    V = preset("tilted_quartic")
    cfg = SdeConfig(V, 1.0, 1.0, 0.25, dt=0.01, T=1e5, n_walkers=20, seed=0)
    with pytest.raises(PartialResultsError) as exc:
        transition_times(cfg, double_well(V), 10_000, max_steps=2000)
    st = exc.value.samples
    assert st.count == len(st.times) and st.steps == 2000


def test_outputs(tmp_path, transitions, equilibrium):
    cfg, st = transitions[1][0.4]
    write_times_csv(tmp_path / "t.csv", st, cfg)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == f"# config_sha256={cfg.digest()}"
    assert lines[1] == "time" and len(lines) == 2 + st.count
    np.testing.assert_array_equal([float(s) for s in lines[2:]], st.times)
    write_moments_json(tmp_path / "m.json", equilibrium)
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["moments"] == equilibrium.moments

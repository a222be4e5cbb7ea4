"""Measurements behind the ten acceptance checks.

Each `criterion_<k>` returns a dict with the measured quantities and a boolean
"passed" computed with the thresholds in THRESHOLDS. The CLI `--check` flag prints
one line per criterion.
"""
from __future__ import annotations

import numpy as np

from . import hypo, operator, quasimode, rates, sde, spectra, wkb
from .potential import ExtendedPhase, double_well, find_critical_points, preset

THRESHOLDS = {
    "c1_rel": 0.15, "c1_trend_factor": 2.0,
    "c2_kernel_residual": 1e-8,
    "c3_spread": 2.0, "c3_taylor": 1e-9,
    "c4_det": 1e-10,
    "c5_mu": 1e-12, "c5_lam_xi": 1e-10, "c5_A_xi_xi": 1e-12, "c5_Hinv": 1e-10,
    "c6_identities": 1e-8, "c6_norm_slack": 1e-8, "c6_projector": 1e-10, "c6_PiZPi": 1e-12,
    "c7_stable_factor": 2.0,
    "c8_stable_factor": 2.0,
    "c9_ratio_over_h": 10.0, "c9_exponent": 3.5,
    "c10_se": 3.0, "c10_slope": 0.10, "c10_band": (0.5, 2.0),
}

SPECTRAL_SWEEP = (0.15, 0.10, 0.08)
HYPO_SWEEP = (0.2, 0.1, 0.05)
QUASIMODE_SWEEP = (1e-3, 7e-4, 5e-4)
WKB_SWEEP = (1e-1, 3e-2, 1e-2)
SDE_SWEEP = (0.25, 0.2, 0.15)


def _setup(name="tilted_quartic", gamma=1.0, nu=1.0):
    V = preset(name)
    topo = double_well(V)
    return V, topo, ExtendedPhase(V, gamma, nu)


def spectral_point(h, name="tilted_quartic", gamma=1.0, nu=1.0, Nx=129, Nv=16, Ny=16, k=6, V=None):
    if V is None:
        V = preset(name)
    topo = double_well(V)
    ph = ExtendedPhase(V, gamma, nu)
    basis = operator.build_basis(V, h, topo=topo, Nx=Nx, Nv=Nv, Ny=Ny)
    asm = operator.assemble(ph, basis)
    rep = spectra.deflated_smallest(asm, k=k)
    ek = rates.eyring_kramers_rate(topo, gamma, h).lam
    wg = spectra.witten_gap(asm)
    lam = rep.smallest
    return {"h": h, "eigenvalues": rep.eigenvalues, "residuals": rep.residuals,
            "kernel_residual": rep.kernel_residual, "lam_num": lam, "lam_ek": ek,
            "ratio": lam.real / ek, "B_eigenvalues": wg.eigenvalues,
            "normalized_gap": wg.normalized_gap, "g": rates.rate_g(h, gamma, nu),
            "gamma": gamma, "nu": nu, "report": rep}


def criterion_1(points=None):
    T = THRESHOLDS
    pts = points or [spectral_point(h) for h in SPECTRAL_SWEEP]
    ratios = np.array([p["ratio"] for p in pts])
    hs = np.array([p["h"] for p in pts])
    trend = (ratios - 1) / np.sqrt(hs)
    same_sign = np.all(trend > 0) or np.all(trend < 0)
    spread = np.max(np.abs(trend)) / np.min(np.abs(trend)) if same_sign else np.inf
    ok = bool(np.all(np.abs(ratios - 1) <= T["c1_rel"]) and spread <= T["c1_trend_factor"])
    return {"passed": ok, "h": hs.tolist(), "ratio": ratios.tolist(), "trend": trend.tolist(),
            "trend_spread": float(spread)}


def criterion_2(points=None):
    pts = points or [spectral_point(h) for h in SPECTRAL_SWEEP]
    coarse = max(pts, key=lambda p: p["h"])
    c0 = spectra.fit_window(coarse["eigenvalues"], coarse["g"])
    rows = []
    ok = True
    for p in pts:
        w = spectra.window_value(c0, p["h"], p["gamma"], p["nu"])
        inside = spectra.census(p["eigenvalues"], w)
        n = 1 + len(inside)          # the deflated kernel eigenvalue is in the window
        lam_ok = (len(inside) == 1 and abs(inside[0].imag) <= 1e-12 * abs(inside[0])
                  and inside[0].real > 0)
        kern_ok = p["kernel_residual"] <= THRESHOLDS["c2_kernel_residual"]
        good = n == 2 and lam_ok and kern_ok
        ok &= good
        rows.append({"h": p["h"], "window": w, "count": n,
                     "inside": [[z.real, z.imag] for z in inside],
                     "kernel_residual": p["kernel_residual"], "passed": bool(good)})
    return {"passed": bool(ok), "c0": c0, "rows": rows}


def criterion_3():
    T = THRESHOLDS
    out = {}
    ok = True
    for name in ("tilted_quartic", "figure1"):
        V, topo, ph = _setup(name)
        d = wkb.build_ell(ph, topo.s, toward=topo.m_hat.x)
        vals = [wkb.scaled_residual_max(d, ph, h) for h in WKB_SWEEP]
        t0, t1 = wkb.taylor_residuals(d, ph)
        spread = max(vals) / min(vals)
        good = spread < T["c3_spread"] and t0 <= T["c3_taylor"] and t1 <= T["c3_taylor"]
        ok &= good
        out[name] = {"scaled_max": vals, "spread": spread, "taylor_w0": t0, "taylor_w1": t1}
    return {"passed": bool(ok), **out}


def saddles(V):
    """Index-1 points with a neighbouring minimum; works for degenerate wells too."""
    pts = find_critical_points(V)
    mins = [p.x for p in pts if p.index == 0]
    return [(p, min(mins, key=lambda m: abs(m - p.x))) for p in pts if p.index == 1]


def criterion_4(params=((1.0, 1.0), (0.5, 2.0), (2.0, 0.5)),
                names=("tilted_quartic", "figure1", "symmetric_quartic"), potentials=None):
    ok = True
    rows = []
    for name, V in zip(names, potentials or [preset(n) for n in names]):
        for g, nu in params:
            ph = ExtendedPhase(V, g, nu)
            for s, m in saddles(V):
                d = wkb.build_ell(ph, s, toward=m)
                M = d.H + d.Pi_xi
                pd = bool(np.linalg.eigvalsh(M).min() > 0)
                r = wkb.check_det_identity(d) if pd else float("inf")
                good = pd and r <= THRESHOLDS["c4_det"]
                ok &= good
                rows.append({"preset": name, "saddle": s.x, "gamma": g, "nu": nu,
                             "det_rel": r, "pos_def": pd})
    return {"passed": bool(ok), "rows": rows}


def criterion_5():
    T = THRESHOLDS
    mu = rates.mu_of_saddle(1.0, 2.0)
    V, topo, ph = _setup()
    d = wkb.build_ell(ph, topo.s, toward=topo.m_hat.x)
    inv = wkb.invariants(d)
    ok = (abs(mu - 1) <= T["c5_mu"] and inv["lam_xi"] <= T["c5_lam_xi"]
          and inv["A_xi_xi"] <= T["c5_A_xi_xi"] and inv["Hinv_xi_xi"] <= T["c5_Hinv"])
    return {"passed": bool(ok), "mu_err": abs(mu - 1), **inv}


def hypo_point(h, Nx=49, Nv=8, Ny=8, name="tilted_quartic", gamma=1.0, nu=1.0, n_trials=1000,
               seed=0, V=None):
    if V is None:
        V = preset(name)
    topo = double_well(V)
    ph = ExtendedPhase(V, gamma, nu)
    basis = operator.build_basis(V, h, topo=topo, Nx=Nx, Nv=Nv, Ny=Ny)
    asm = operator.assemble(ph, basis)
    A = hypo.build_A(asm)
    F = hypo.rough_quasimodes(asm, topo)
    return {"asm": asm, "A": A, "F": F,
            "coercivity": hypo.coercivity_functional(asm, A, F, n_trials=n_trials, seed=seed)}


def criterion_6(h=0.1, Nx=49, Nv=8, Ny=8, asm=None):
    T = THRESHOLDS
    if asm is None:
        V, topo, ph = _setup()
        basis = operator.build_basis(V, h, topo=topo, Nx=Nx, Nv=Nv, Ny=Ny)
        asm = operator.assemble(ph, basis)
    l23 = operator.lemma23_residual(asm)
    prods = operator.product_identities(asm)
    A = hypo.build_A(asm)
    proj = hypo.projector_identities(asm, A)
    pzp = operator.structure_checks(asm)["PiZPi"]
    ok = (l23 <= T["c6_identities"] and max(prods.values()) <= T["c6_identities"]
          and A.norm <= 1 / np.sqrt(A.alpha) + T["c6_norm_slack"]
          and max(proj.values()) <= T["c6_projector"] and pzp <= T["c6_PiZPi"])
    return {"passed": bool(ok), "lemma23": l23, **prods, "norm_A": A.norm,
            "norm_bound": 1 / np.sqrt(A.alpha), **proj, "PiZPi": pzp,
            "formula_residual": A.formula_residual}


def criterion_7(points=None):
    pts = points or [hypo_point(h) for h in HYPO_SWEEP]
    res = [p["coercivity"] for p in pts]
    ratios = np.array([r.ratio for r in res])
    mins = np.array([r.minimum for r in res])
    ok = bool(np.all(mins > 0) and ratios.max() / ratios.min() <= THRESHOLDS["c7_stable_factor"])
    return {"passed": ok, "h": [r.h for r in res], "minimum": mins.tolist(),
            "ratio": ratios.tolist(), "ratio_spread": float(ratios.max() / ratios.min())}


def criterion_8(points=None):
    pts = points or [spectral_point(h) for h in SPECTRAL_SWEEP]
    hs = np.array([p["h"] for p in pts])
    ev2 = np.array([p["B_eigenvalues"][1] for p in pts])
    ev3 = np.array([p["B_eigenvalues"][2] for p in pts])
    lo = float(np.max(-hs * np.log(ev3)))
    hi = float(np.min(-hs * np.log(ev2)))
    c = 0.5 * (lo + hi)
    counts = [int(np.sum(np.asarray(p["B_eigenvalues"]) < np.exp(-c / p["h"]))) for p in pts]
    eps = np.array([p["normalized_gap"] for p in pts])
    ok = (lo < hi and c > 0 and all(n == 2 for n in counts)
          and eps.min() > 0 and eps.max() / eps.min() <= THRESHOLDS["c8_stable_factor"])
    return {"passed": bool(ok), "c": c, "c_interval": [lo, hi], "counts": counts,
            "epsilon": eps.tolist()}


def quasimode_sweep(hs=QUASIMODE_SWEEP, name="tilted_quartic", gamma=1.0, nu=1.0, V=None):
    if V is None:
        V = preset(name)
    topo = double_well(V)
    ph = ExtendedPhase(V, gamma, nu)
    eik = wkb.build_ell(ph, topo.s, toward=topo.m_hat.x)
    geo = quasimode.choose_geometry(ph, topo, eik)
    return [quasimode.interaction_report(ph, topo, eik, geo, h,
                                         rates.eyring_kramers_rate(topo, gamma, h).lam) for h in hs]


def criterion_9(reports=None):
    T = THRESHOLDS
    reps = reports or quasimode_sweep()
    hs = np.array([r["h"] for r in reps])
    rel = np.array([r["rayleigh_over_ek"] - 1 for r in reps])
    q = np.array([r["P_norm2"] / r["rayleigh"] for r in reps])
    expo = float(np.polyfit(np.log(hs), np.log(q), 1)[0])
    off = np.array([abs(r["gram"][0][1]) for r in reps])
    decay = float(-np.polyfit(1 / hs, np.log(off), 1)[0])
    diag_ok = all(abs(r["gram"][0][0] - 1) <= 1e-8 and abs(r["gram"][1][1] - 1) <= 1e-8 for r in reps)
    ok = (np.max(np.abs(rel) / hs) <= T["c9_ratio_over_h"] and expo >= T["c9_exponent"]
          and decay > 0 and diag_ok and all(r["rayleigh"] > 0 for r in reps))
    return {"passed": bool(ok), "h": hs.tolist(), "rel_over_h": (rel / hs).tolist(),
            "exponent": expo, "gram_decay": decay, "gram_offdiag": off.tolist(),
            "tau": reps[0]["tau"], "delta": reps[0]["delta"]}


def evaluate_sde(moment_runs, hs, means, S, lam_ek=None):
    """Criterion 10 formulas on measured data.

    moment_runs is a list of (h, moments) pairs; every run must match h within
    3 standard errors. lam_ek is the Eyring-Kramers value at h=0.2 (None when 0.2 is not swept).
    The band is checked literally against 1/lambda_EK; lambda_EK carries the
    factor h of the generator P, so mean*lambda_EK/h is reported alongside.
    """
    T = THRESHOLDS
    var_ok = all(abs(m["var_v"] - hm) <= T["c10_se"] * m["var_v_se"]
                 and abs(m["var_y"] - hm) <= T["c10_se"] * m["var_y_se"] for hm, m in moment_runs)
    out = {"moments": [dict(m, h=hm) for hm, m in moment_runs], "var_ok": bool(var_ok), "h": list(hs), "means": list(means), "S": S}
    ok = var_ok
    if len(hs) >= 2:
        slope = float(np.polyfit(1 / np.asarray(hs), np.log(means), 1)[0])
        out.update(slope=slope, slope_rel=slope / S - 1,
                   slope_ok=bool(abs(slope / S - 1) <= T["c10_slope"]))
        ok = ok and out["slope_ok"]
    if lam_ek is not None:
        t02 = means[list(hs).index(0.2)]
        band = t02 * lam_ek
        out.update(time_times_lam_ek=band, time_times_lam_ek_over_h=band / 0.2,
                   band_ok=bool(T["c10_band"][0] <= band <= T["c10_band"][1]), heuristic=True)
        ok = ok and out["band_ok"]
    out["passed"] = bool(ok)
    return out


def criterion_10(seed=0, n_transitions=8000, n_walkers=400):
    V, topo, ph = _setup()
    h0 = 0.2
    cfg = sde.SdeConfig(V, 1.0, 1.0, h0, dt=0.01, T=400.0, burn_in=20.0, n_walkers=64,
                        x0=topo.m_under.x, seed=seed)
    st = sde.simulate(cfg)
    means, ses = [], []
    for i, h in enumerate(SDE_SWEEP):
        c = sde.SdeConfig(V, 1.0, 1.0, h, dt=0.01, T=1e6, n_walkers=n_walkers, seed=seed + 1 + i)
        tt = sde.transition_times(c, topo, n_transitions)
        means.append(tt.mean)
        ses.append(tt.se)
    out = evaluate_sde([(h0, st.moments)], SDE_SWEEP, means, topo.S,
                       rates.eyring_kramers_rate(topo, 1.0, h0).lam)
    out["se"] = ses
    return out


def run_all(verbose=print, seed=0):
    """Evaluate every criterion on its fixed sweep; spectral and hypo sweeps are shared."""
    sp_pts = [spectral_point(h) for h in SPECTRAL_SWEEP]
    hy_pts = [hypo_point(h, seed=seed) for h in HYPO_SWEEP]
    results = {}
    for k, fn in ((1, lambda: criterion_1(sp_pts)), (2, lambda: criterion_2(sp_pts)),
                  (3, criterion_3), (4, criterion_4), (5, criterion_5), (6, criterion_6),
                  (7, lambda: criterion_7(hy_pts)), (8, lambda: criterion_8(sp_pts)),
                  (9, criterion_9), (10, lambda: criterion_10(seed=seed))):
        try:
            r = fn()
        except Exception as exc:       # report and continue with the next check
            r = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
        results[k] = r
        if verbose:
            verbose(f"criterion {k:2d}: {'PASS' if r['passed'] else 'FAIL'}")
    return results

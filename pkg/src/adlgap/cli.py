"""Command line entry point: run pipelines from a config and write reports.

    adlgap run [CONFIG] [--preset NAME] [--out DIR] [--seed N] [--check]

Exit status: 0 when every check passes, 1 when any selected check fails (a
pipeline that raises counts as failed), 2 for config or I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__, acceptance, hypo, rates, sde, wkb
from .config import ExperimentConfig, load_config, parse_config
from .errors import AdlgapError, ConfigError, ParameterError
from .potential import ExtendedPhase, double_well

log = logging.getLogger("adlgap")

CONVERGENCE_COLUMNS = ("h", "gamma", "nu", "lambda_re", "lambda_im", "residual",
                       "lambda_ek", "ratio", "ratio_minus_1_over_sqrt_h")


def jsonable(o):
    if isinstance(o, dict):
        return {str(k): jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return jsonable(o.tolist())
    if isinstance(o, (complex, np.complexfloating)):
        return [float(o.real), float(o.imag)]
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if np.isfinite(o) else str(o)
    if hasattr(o, "to_dict"):
        return jsonable(o.to_dict())
    return o


def dumps(o) -> str:
    return json.dumps(jsonable(o), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _num(x) -> str:
    return repr(float(x))


def emit_convergence_table(summaries) -> str:
    """CSV text with one row per spectral sweep point, columns CONVERGENCE_COLUMNS.

    The last column (lambda_num/lambda_EK - 1)/sqrt(h) exposes the (1 + O(sqrt h))
    trend.
    """
    if len(summaries) < 2:
        raise ParameterError("convergence table needs at least two h points")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CONVERGENCE_COLUMNS)
    for r in summaries:
        lam = complex(r["lam_num"])
        ratio = lam.real / r["lam_ek"]
        w.writerow([_num(r["h"]), _num(r["gamma"]), _num(r["nu"]), _num(lam.real), _num(lam.imag),
                    _num(r["residual"]), _num(r["lam_ek"]), _num(ratio),
                    _num((ratio - 1) / np.sqrt(r["h"]))])
    return buf.getvalue()


@dataclass
class PipelineResult:
    name: str
    data: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)      # file name -> text
    error: str | None = None

    @property
    def passed(self):
        return self.error is None and all(self.checks.values())


def _tag(g, nu):
    return f"g{g:g}_nu{nu:g}"


def run_wkb(cfg: ExperimentConfig, V) -> PipelineResult:
    res = PipelineResult("wkb")
    rows = []
    c3, c5 = True, True
    T = acceptance.THRESHOLDS
    for g, nu in cfg.params:
        ph = ExtendedPhase(V, g, nu)
        for s, m in acceptance.saddles(V):
            d = wkb.build_ell(ph, s, toward=m)
            inv = wkb.invariants(d)
            t0, t1 = wkb.taylor_residuals(d, ph)
            scaled = [wkb.scaled_residual_max(d, ph, h) for h in cfg.h]
            row = {"gamma": g, "nu": nu, "saddle": s.x, "mu": d.mu, "xi": d.xi,
                   "taylor_w0": t0, "taylor_w1": t1, "h": cfg.h, "scaled_residual_max": scaled,
                   **inv}
            if len(cfg.h) >= 2:
                row["scaled_spread"] = max(scaled) / min(scaled)
                c3 &= row["scaled_spread"] < T["c3_spread"]
            c3 &= t0 <= T["c3_taylor"] and t1 <= T["c3_taylor"]
            c5 &= (inv["lam_xi"] <= T["c5_lam_xi"] and inv["A_xi_xi"] <= T["c5_A_xi_xi"]
                   and inv["Hinv_xi_xi"] <= T["c5_Hinv"])
            rows.append(row)
    c4 = acceptance.criterion_4(params=cfg.params, names=[V.name], potentials=[V])
    c5 &= abs(rates.mu_of_saddle(1.0, 2.0) - 1) <= T["c5_mu"]
    res.checks = {"criterion_3": bool(c3), "criterion_4": c4["passed"], "criterion_5": bool(c5)}
    res.data = {"saddles": rows, "determinant": c4["rows"]}
    res.files["wkb.json"] = dumps(res.data)
    return res


def run_spectra(cfg: ExperimentConfig, V) -> PipelineResult:
    res = PipelineResult("spectra")
    table, per = [], {}
    ok = {"criterion_1": True, "criterion_2": True, "criterion_8": True}
    for g, nu in cfg.params:
        pts = [acceptance.spectral_point(h, gamma=g, nu=nu, Nx=cfg.Nx, Nv=cfg.Nv, Ny=cfg.Ny,
                                         k=cfg.n_eigs, V=V) for h in cfg.h]
        out = {"points": []}
        for p in pts:
            rep = p["report"]
            i = int(np.argmin(np.abs(rep.eigenvalues)))
            row = {"h": p["h"], "gamma": g, "nu": nu, "lam_num": p["lam_num"],
                   "lam_ek": p["lam_ek"], "ratio": p["ratio"], "residual": float(rep.residuals[i]),
                   "kernel_residual": p["kernel_residual"]}
            table.append(row)
            out["points"].append({**row, "spectrum": rep.to_dict(),
                                  "B_eigenvalues": p["B_eigenvalues"],
                                  "normalized_gap": p["normalized_gap"]})
        c2 = acceptance.criterion_2(pts)
        ok["criterion_2"] &= c2["passed"]
        out["criterion_2"] = c2
        if len(pts) >= 2:
            c1 = acceptance.criterion_1(pts)
            c8 = acceptance.criterion_8(pts)
            ok["criterion_1"] &= c1["passed"]
            ok["criterion_8"] &= c8["passed"]
            out.update(criterion_1=c1, criterion_8=c8)
        else:
            ok.pop("criterion_1", None)
            ok.pop("criterion_8", None)
        per[_tag(g, nu)] = out
    res.checks = ok
    res.data = {"rows": table, "by_params": per}
    res.files["spectra.json"] = dumps(res.data)
    if len(table) >= 2:
        res.files["convergence.csv"] = emit_convergence_table(table)
    return res


def run_hypo(cfg: ExperimentConfig, V) -> PipelineResult:
    res = PipelineResult("hypo")
    rows, per = [], {}
    c6, c7 = True, True
    for g, nu in cfg.params:
        pts = [acceptance.hypo_point(h, Nx=cfg.hypo_Nx, Nv=cfg.hypo_Nv, Ny=cfg.hypo_Ny, gamma=g, nu=nu,
                                     n_trials=cfg.coercivity_trials, seed=cfg.seed, V=V) for h in cfg.h]
        out = []
        for p in pts:
            asm, A, co = p["asm"], p["A"], p["coercivity"]
            chk6 = acceptance.criterion_6(asm=asm)
            c6 &= chk6["passed"]
            rows.append({"h": asm.h, "gamma": g, "nu": nu, "alpha": A.alpha, "norm_A": A.norm,
                         "coercivity_min": co.minimum, "g_h": co.g_h, "ratio": co.ratio})
            out.append({"h": asm.h, "A": A.to_dict(), "coercivity": co.to_dict(), "identities": chk6,
                        "remainders": hypo.remainder_bounds(asm, A),
                        "rough_residuals": hypo.rough_residuals(asm, p["F"]),
                        "minor_AZPi": hypo.minor_AZPi(asm, A, p["F"])})
        c7r = acceptance.criterion_7(pts)
        c7 &= c7r["passed"]
        per[_tag(g, nu)] = {"points": out, "criterion_7": c7r}
    res.checks = {"criterion_6": bool(c6), "criterion_7": bool(c7)}
    res.data = {"by_params": per}
    res.files["hypo.json"] = dumps(res.data)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=hypo.CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _num(v) for k, v in r.items()})
    res.files["hypo_diagnostics.csv"] = buf.getvalue()
    return res


def run_sde(cfg: ExperimentConfig, V) -> PipelineResult:
    res = PipelineResult("sde")
    topo = double_well(V)
    ok = True
    per = {}
    for j, (g, nu) in enumerate(cfg.params):
        runs, means = [], []
        for i, h in enumerate(cfg.h):
            base = cfg.seed + 1000 * j + 10 * i
            mc = sde.SdeConfig(V, g, nu, h, dt=cfg.sde_dt, T=cfg.sde_moment_T, burn_in=cfg.sde_burn_in,
                               n_walkers=64, x0=topo.m_under.x, seed=base)
            st = sde.simulate(mc)
            runs.append((h, st.moments))
            tc = sde.SdeConfig(V, g, nu, h, dt=cfg.sde_dt, T=cfg.sde_T, n_walkers=cfg.sde_walkers,
                               seed=base + 1)
            tt = sde.transition_times(tc, topo, cfg.sde_transitions)
            means.append(tt.mean)
            tag = f"{_tag(g, nu)}_h{h:g}"
            buf = io.StringIO()
            buf.write(f"# config_sha256={tc.digest()}\ntime\n")
            buf.writelines(f"{_num(t)}\n" for t in tt.times)
            res.files[f"times_{tag}.csv"] = buf.getvalue()
            res.files[f"moments_{tag}.json"] = dumps(st.to_dict())
        lam = rates.eyring_kramers_rate(topo, g, 0.2).lam if 0.2 in cfg.h else None
        ev = acceptance.evaluate_sde(runs, cfg.h, means, topo.S, lam)
        ok &= ev["passed"]
        per[_tag(g, nu)] = ev
    res.checks = {"criterion_10": bool(ok)}
    res.data = {"by_params": per}
    res.files["sde.json"] = dumps(res.data)
    return res


def run_quasimode(cfg: ExperimentConfig, V) -> PipelineResult:
    res = PipelineResult("quasimode")
    hs = cfg.quasimode_h or cfg.h
    ok = True
    per = {}
    for g, nu in cfg.params:
        reps = acceptance.quasimode_sweep(hs, gamma=g, nu=nu, V=V)
        out = {"reports": reps}
        if len(reps) >= 2:
            c9 = acceptance.criterion_9(reps)
            ok &= c9["passed"]
            out["criterion_9"] = c9
        per[_tag(g, nu)] = out
    if len(hs) >= 2:
        res.checks = {"criterion_9": bool(ok)}
    res.data = {"by_params": per}
    res.files["quasimode.json"] = dumps(res.data)
    return res


PIPELINE_FUNCS = {"wkb": run_wkb, "spectra": run_spectra, "hypo": run_hypo,
                  "sde": run_sde, "quasimode": run_quasimode}


def _guarded(name, cfg, V):
    try:
        return PIPELINE_FUNCS[name](cfg, V)
    except Exception as exc:     # isolate: one failing pipeline does not abort the others
        log.exception("pipeline %s failed", name)
        return PipelineResult(name, error=f"{type(exc).__name__}: {exc}")


def ensure_writable(out):
    """Create `out` and prove it is writable, before any computation."""
    os.makedirs(out, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=out, prefix=".probe"):
        pass


def run(cfg: ExperimentConfig, check: bool = False) -> dict:
    """Run the selected pipelines (concurrently when workers > 1) and write reports."""
    ensure_writable(cfg.out)
    V = cfg.make_potential()
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futs = [pool.submit(_guarded, name, cfg, V) for name in cfg.pipelines]
        results = [f.result() for f in futs]
    checks = {}
    summary = {"version": __version__, "config": cfg.to_dict(), "pipelines": {}}
    for r in results:
        for k, v in r.checks.items():
            checks[f"{r.name}.{k}"] = bool(v)
        if r.error:
            checks[f"{r.name}.completed"] = False
        summary["pipelines"][r.name] = {"status": "error" if r.error else "ok", "error": r.error,
                                        "checks": r.checks, "files": sorted(r.files)}
        if r.name == "spectra" and not r.error:
            summary["spectra"] = [{k: row[k] for k in ("h", "gamma", "nu", "lam_num", "lam_ek", "ratio",
                                                       "residual", "kernel_residual")}
                                  for row in r.data["rows"]]
    if check:
        acc = acceptance.run_all(verbose=lambda s: log.info(s), seed=cfg.seed)
        summary["acceptance"] = acc
        for k, r in acc.items():
            checks[f"acceptance.criterion_{k}"] = bool(r["passed"])
    summary["checks"] = checks
    summary["passed"] = all(checks.values())
    # report writing is serialized
    for r in results:
        for fname, text in r.files.items():
            with open(os.path.join(cfg.out, fname), "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    with open(os.path.join(cfg.out, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    with open(os.path.join(cfg.out, "summary.json"), "w", encoding="utf-8") as fh:
        fh.write(dumps(summary))
    return summary


def build_parser():
    p = argparse.ArgumentParser(prog="adlgap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run pipelines from a config file")
    r.add_argument("config", nargs="?", help="flat key = value config file (defaults if omitted)")
    r.add_argument("--preset", help="potential preset, overrides the config")
    r.add_argument("--out", help="output directory, overrides the config")
    r.add_argument("--seed", type=int, help="seed, overrides the config")
    r.add_argument("--check", action="store_true", help="also run the acceptance suite")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    over = {"potential": args.preset, "out": args.out, "seed": args.seed}
    try:
        cfg = load_config(args.config, over) if args.config else parse_config("", over)
        ensure_writable(cfg.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: cannot write to {args.out or cfg.out}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    try:
        summary = run(cfg, check=args.check)
    except (AdlgapError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for k, v in sorted(summary["checks"].items()):
        print(f"{k}: {'PASS' if v else 'FAIL'}")
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())

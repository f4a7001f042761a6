"""Command line interface: effective / threshold / rate / selfcheck."""
from __future__ import annotations

import argparse
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .checks import run_selfcheck
from .config import RunConfig, load_config
from .effective import build_workspace
from .errors import HomogError, UsageError
from .kernel import moment, select_truncation
from .rate import ABLATION_MODES, SweepConfig, rate_report
from .report import REPORT_SCHEMA_VERSION, check, write_csv, write_json
from .threshold import build_threshold_context, threshold_sweep, xi_spot_check

THRESHOLD_HEADER = ["xi_norm", "F_minus_P", "Psi", "lambda1_re", "lambda1_im"]
RATE_HEADER = ["eps", "E", "eps2_E"]


def _versions():
    return {"nonlocal_homog": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _header(cfg: RunConfig, command: str) -> dict:
    return {"schema_version": REPORT_SCHEMA_VERSION, "command": command, "config": cfg.to_dict(),
            "versions": _versions()}


def _workspace(cfg: RunConfig, q0_hook=None):
    plan = select_truncation(cfg.kernel, cfg.tau)
    return build_workspace(cfg.grid, cfg.kernel, cfg.mu, plan, q0_hook=q0_hook)


def effective_summary(cfg: RunConfig, ws) -> dict:
    st, model, coer = ws.stationary, ws.model, ws.coercivity
    tol = cfg.tolerances
    corr = model.correctors
    lam_min = float(np.linalg.eigvalsh(model.g0)[0])
    return {
        "truncation": {"radius": ws.plan.radius, "tau": ws.plan.tau, "tail_bound": ws.plan.tail},
        "mu_bounds": [ws.assembler.mu_minus, ws.assembler.mu_plus],
        "moments": [moment(ws.kspec, k) for k in range(4)],
        "alpha": model.alpha,
        "g0": model.g0,
        "g_asymmetry": model.asymmetry,
        "stationary": {
            "q0": st.q0, "q_minus": st.q_minus, "q_plus": st.q_plus,
            "psi_minus": st.psi_minus, "psi_plus": st.psi_plus,
            "eigenvalue": st.eigenvalue, "gap": st.gap,
        },
        "coercivity": {"M_a": coer.M_a, "r_a": coer.r_a, "C_r": coer.C_r, "C_pi": coer.C_pi,
                       "C_a": coer.C_a, "search_radius": coer.search_radius,
                       "plateau_min": coer.plateau_min},
        "checks": [
            check("stationarity_residual", st.residual, tol["stationary_residual"],
                  st.residual <= tol["stationary_residual"]),
            check("q0_integral", abs(ws.grid.weight * st.q0.sum() - 1), tol["integral"],
                  abs(ws.grid.weight * st.q0.sum() - 1) <= tol["integral"]),
            check("corrector_constraint", max(corr.residuals[f"v{j}_constraint"] for j in range(ws.grid.d)),
                  1e-10, max(corr.residuals[f"v{j}_constraint"] for j in range(ws.grid.d)) <= 1e-10),
            check("g0_min_eigenvalue", lam_min, tol["coercivity_slack"] * model.lower_bound,
                  lam_min >= tol["coercivity_slack"] * model.lower_bound, "min"),
        ],
    }


def cmd_effective(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    ws = _workspace(cfg)
    payload = {**_header(cfg, "effective"), "effective": effective_summary(cfg, ws)}
    write_json(out / "effective.json", payload)
    m = ws.model
    print(f"alpha = {np.array2string(m.alpha, precision=10)}")
    print(f"g0    = {np.array2string(m.g0, precision=10)}")
    print(f"q0 in [{ws.stationary.q_minus:.10g}, {ws.stationary.q_plus:.10g}]")
    return 0 if all(c["pass"] for c in payload["effective"]["checks"]) else 1


def threshold_verdicts(rep, tol) -> list:
    """Slope verdicts; a remainder that stays below the contour defect everywhere passes as vanishing."""
    s = rep.slopes
    floor = tol["contour_defect"]

    def slope_check(name, values, lo, hi=None):
        slope = s[name][0]
        if float(np.max(values)) <= floor:
            return check(f"slope_{name}", slope, floor, True, "vanishing")
        if hi is None:
            return check(f"slope_{name}", slope, lo, slope >= lo, "min")
        return check(f"slope_{name}", slope, [lo, hi], lo <= slope <= hi, "window")

    return [
        slope_check("F_minus_P", rep.F_minus_P, tol["fp_slope_min"], tol["fp_slope_max"]),
        slope_check("Psi", rep.Psi, tol["psi_slope_min"]),
        slope_check("lambda1_remainder", rep.lambda1_remainder, tol["lambda_slope_min"]),
        check("rank_F", max(rep.ranks), 1, all(r == 1 for r in rep.ranks), "equal"),
    ]


def cmd_threshold(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    ws = _workspace(cfg)
    ctx = build_threshold_context(ws)
    th = cfg.threshold
    rep = threshold_sweep(ws, ctx, th.count, th.xi_min, th.direction)
    verdicts = threshold_verdicts(rep, cfg.tolerances)
    gap = ctx.gap
    payload = {
        **_header(cfg, "threshold"),
        "gap": {"d0": gap.d0, "K": gap.K, "K_sampled": True, "K_samples": len(gap.K_samples),
                "delta0": gap.delta0, "zero_eigenvalue": gap.zero_eigenvalue,
                "min_real_part": gap.min_real_part, "contour_radius": gap.contour_radius},
        "constants": ctx.ledger.as_dict(),
        "spectral_route": {"g": ctx.terms.g, "R1_residual": ctx.terms.R1_residual,
                           "G1_defect": ctx.terms.G1_defect, "offdiag_block_norms": ctx.terms.offdiag_norms},
        "threshold": {"direction": rep.direction, "xi_norm": rep.xi_norms, "F_minus_P": rep.F_minus_P,
                      "Psi": rep.Psi, "lambda1": rep.lambda1, "lambda1_remainder": rep.lambda1_remainder,
                      "slopes": {k: {"slope": v[0], "intercept": v[1], "rms_residual": v[2]}
                                 for k, v in rep.slopes.items()},
                      "C1_bound_violations": rep.C1_violations, "contour_nodes": rep.contour_nodes,
                      "ranks": rep.ranks},
        "verdicts": verdicts,
    }
    write_json(out / "threshold.json", payload)
    rows = [(r, a, b, l.real, l.imag) for r, a, b, l in zip(rep.xi_norms, rep.F_minus_P, rep.Psi, rep.lambda1)]
    write_csv(out / "threshold.csv", THRESHOLD_HEADER, rows)
    for v in verdicts:
        print(f"{'PASS' if v['pass'] else 'FAIL'}  {v['name']} = {v['value']}")
    return 0 if all(v["pass"] for v in verdicts) else 1


def cmd_rate(cfg: RunConfig, out: Path, threads: int = 1, ablate=()) -> int:
    ws = _workspace(cfg)
    ctx = build_threshold_context(ws)
    sc = cfg.sweep
    modes = tuple(dict.fromkeys(tuple(sc.ablations) + tuple(ablate)))
    sweep = SweepConfig(sc.eps, sc.xi_count, sc.patch_count, sc.patch_directions, modes)
    rep = rate_report(ws, ctx, sweep, threads)
    tol = cfg.tolerances
    lo, hi = tol["scaled_slope_min"], tol["scaled_slope_max"]
    verdict_ok = lo <= rep.scaled_fit[0] <= hi
    spots = xi_spot_check(ws, ctx, slack=tol["xi_bound_slack"])
    payload = {
        **_header(cfg, "rate"),
        "delta0": ctx.gap.delta0,
        "xi_grid_size": len(rep.xi_grid),
        "eps": rep.eps, "E": rep.E, "eps2_E": rep.scaled,
        "fit": {"slope": rep.fit[0], "intercept": rep.fit[1], "rms_residual": rep.fit[2]},
        "scaled_fit": {"slope": rep.scaled_fit[0], "intercept": rep.scaled_fit[1],
                       "rms_residual": rep.scaled_fit[2]},
        "argmax_xi": rep.argmax_xi,
        "C_hat": rep.C_hat, "C_ledger": rep.C_ledger, "constants": ctx.ledger.as_dict(),
        "verdicts": [check("scaled_slope", rep.scaled_fit[0], [lo, hi], verdict_ok, "window"),
                     check("scaled_decay", float(rep.scaled[-1] / rep.scaled[0]), 0.25, rep.decays),
                     check("xi_bound_spot_check", max(s["ratio"] for s in spots), 1 + tol["xi_bound_slack"],
                           all(s["pass"] for s in spots))],
        "xi_spot_check": spots,
        "verdict": "PASS" if verdict_ok and rep.decays else "FAIL",
        "ablations": {k: {"E": v["E"], "eps2_E": v["scaled"],
                          "scaled_fit": {"slope": v["scaled_fit"][0], "intercept": v["scaled_fit"][1],
                                         "rms_residual": v["scaled_fit"][2]}}
                      for k, v in rep.ablations.items()},
    }
    write_json(out / "rate.json", payload)
    header = list(RATE_HEADER)
    cols = [rep.eps, rep.E, rep.scaled]
    for k, v in rep.ablations.items():
        tag = k.replace("-", "_")
        header += [f"E_{tag}", f"eps2_E_{tag}"]
        cols += [v["E"], v["scaled"]]
    write_csv(out / "rate.csv", header, zip(*cols))
    for e, E, s in zip(rep.eps, rep.E, rep.scaled):
        print(f"eps = {e:<10.6g} E = {E:<14.8g} eps^2 E = {s:.8g}")
    print(f"slope(E) = {rep.fit[0]:.4f}   slope(eps^2 E) = {rep.scaled_fit[0]:.4f}   "
          f"C_hat = {rep.C_hat:.4g}   ledger constant = {rep.C_ledger:.4g}")
    for k, v in rep.ablations.items():
        print(f"ablation {k}: slope(eps^2 E) = {v['scaled_fit'][0]:.4f}")
    print(f"verdict: {payload['verdict']}")
    return 0 if payload["verdict"] == "PASS" else 1


def cmd_selfcheck(cfg: RunConfig, out: Path | None = None, threads: int = 1, q0_hook=None, seed: int = 0) -> int:
    ws = _workspace(cfg, q0_hook=q0_hook)
    ctx = build_threshold_context(ws)
    results = run_selfcheck(ws, ctx, cfg.tolerances, seed=seed)
    width = max(len(r["name"]) for r in results)
    for r in results:
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['name']:<{width}}  value={r['value']}  "
              f"tol={r['tolerance']}")
    failed = [r for r in results if not r["pass"]]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if out is not None:
        write_json(out / "selfcheck.json", {**_header(cfg, "selfcheck"), "checks": results})
    return 0 if not failed else 1


def _corrupt_q0(q0):
    """Fault injection: tilt q0 by a smooth factor and renormalize."""
    n = q0.size
    tilt = 1.0 + 0.3 * np.cos(2 * np.pi * (np.arange(n) + 0.5) / n)
    q = q0 * tilt
    return q / q.mean()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nonlocal-homog",
                                     description="Effective models and homogenization rates for periodic "
                                                 "nonlocal convolution operators.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="JSON config file or built-in fixture name")
    common.add_argument("--out", type=Path, default=None, help="output directory (default: config 'output')")
    common.add_argument("--threads", type=int, default=1, help="worker threads for the quasimomentum sweep")
    common.add_argument("--seed", type=int, default=0, help="seed for the sampled quasimomenta in selfcheck")
    sub.add_parser("effective", parents=[common], help="stationary density, drift and effective matrix")
    sub.add_parser("threshold", parents=[common], help="spectral gap, Riesz projectors, threshold slopes")
    p = sub.add_parser("rate", parents=[common], help="fibre-wise resolvent error sweep and rate fit")
    p.add_argument("--ablate", default="", help=f"comma-separated subset of {','.join(ABLATION_MODES)}")
    p = sub.add_parser("selfcheck", parents=[common], help="run the cross-module invariant suite")
    p.add_argument("--inject-q0-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = load_config(args.config)
        out = args.out if args.out is not None else Path(cfg.output)
        if args.command == "effective":
            code = cmd_effective(cfg, out, args.threads)
        elif args.command == "threshold":
            code = cmd_threshold(cfg, out, args.threads)
        elif args.command == "rate":
            modes = tuple(m for m in args.ablate.split(",") if m)
            bad = [m for m in modes if m not in ABLATION_MODES]
            if bad:
                raise UsageError(f"--ablate: unknown mode(s) {bad}; expected {ABLATION_MODES}")
            code = cmd_rate(cfg, out, args.threads, modes)
        else:
            hook = _corrupt_q0 if args.inject_q0_fault else None
            code = cmd_selfcheck(cfg, out, args.threads, hook, args.seed)
    except HomogError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"elapsed {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

"""``aggdiff`` command line.

Exit codes: 0 ok/completed/admissible, 1 error, 2 inadmissible kernel,
3 indeterminate classification, 4 numerical blow-up, 5 dt floor,
6 sweep protocol error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import _accel
from . import config as cfgmod
from .diffusion import IndeterminateError, classify_criticality, entropy_density, entropy_growth_limit

log = logging.getLogger("aggdiff")

EXIT_OK, EXIT_ERROR, EXIT_INADMISSIBLE, EXIT_INDETERMINATE = 0, 1, 2, 3
EXIT_BLOWUP, EXIT_DT_FLOOR, EXIT_PROTOCOL = 4, 5, 6
STATUS_EXIT = {"completed": EXIT_OK, "numerical_blowup": EXIT_BLOWUP, "dt_floor": EXIT_DT_FLOOR}
OUTPUT_ROOT_ENV = "AGGDIFF_OUTPUT_ROOT"


class CLIError(RuntimeError):
    pass


def _run_dir(args, command: str) -> Path:
    """Fresh run directory; existing paths are never reused."""
    if args.out:
        d = Path(args.out)
    else:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "aggdiff-runs"))
        stem = Path(str(args.config).replace("fixture:", "")).stem
        d = root / f"{command}-{stem}"
    if d.exists():
        raise CLIError(f"refusing to overwrite existing output {d}")
    d.mkdir(parents=True)
    return d


def _write_config(d: Path, cfg: cfgmod.RunConfigFile) -> None:
    (d / "config.ini").write_text(cfg.to_text())


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(rows)


def _json(path: Path, obj) -> None:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        return repr(o)

    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n")


def _jnum(x):
    x = float(x)
    return x if math.isfinite(x) else repr(x)


# -- commands --------------------------------------------------------------------
def cmd_check_kernel(args, cfg) -> int:
    from .kernel import check_admissible, critical_exponent, singular_order
    from .config import build_grid, build_kernel

    grid = build_grid(cfg) if cfg.has("grid") else None
    k = build_kernel(cfg, grid)
    if k is None:
        raise CLIError("check-kernel needs a kernel family other than zero")
    rep = check_admissible(k)
    rows = [("condition", "passed", "diagnostic")] + [tuple(map(str, r)) for r in rep.rows()]
    for r in rows[1:-1]:
        print(f"{r[0]:<28} {r[1]:<6} {r[2]}")
    status = "admissible" if rep.overall else "inadmissible"
    print(f"overall: {status}")
    extra = {"overall": rep.overall}
    if rep.overall:
        sc = singular_order(k)
        ms = critical_exponent(k)
        print(f"singularity: {sc.kind} c={sc.c:.10g} alpha={sc.alpha:.10g}")
        print(f"m* = {ms!r}")
        extra.update(singularity=sc.kind, c=sc.c, alpha=sc.alpha, mstar=ms)
        rows += [("singularity", sc.kind, f"c={sc.c!r} alpha={sc.alpha!r}"), ("mstar", repr(ms), "")]
    if args.out:
        d = _run_dir(args, "check-kernel")
        _write_config(d, cfg)
        _write_csv(d / "admissibility.csv", rows)
        _json(d / "summary.json", extra)
    return EXIT_OK if rep.overall else EXIT_INADMISSIBLE


def cmd_classify(args, cfg) -> int:
    from .config import build_diffusion, build_grid, build_kernel
    from .energy import critical_mass
    from .kernel import critical_exponent

    grid = build_grid(cfg) if cfg.has("grid") else None
    k = build_kernel(cfg, grid)
    diff = build_diffusion(cfg)
    if k is None:
        raise CLIError("classify needs an interaction kernel")
    ms = critical_exponent(k)
    try:
        cls = classify_criticality(diff, ms)
        L = entropy_growth_limit(entropy_density(diff, strict=False), ms)
        pred = critical_mass(k, diff, strict=False)
    except IndeterminateError as exc:
        print(f"indeterminate: {exc}")
        ev = getattr(exc, "evidence", None)
        if isinstance(ev, dict):
            for key, val in ev.items():
                print(f"  {key}: {val}")
        elif ev is not None:
            print(f"  evidence: {np.array2string(np.asarray(ev, float), precision=4, max_line_width=100)}")
        return EXIT_INDETERMINATE
    print(f"m* = {ms!r}")
    print(f"class: {cls.kind}")
    print(f"entropy growth limit L = {L!r}")
    print(f"regime: {pred.regime}")
    if cls.kind == "critical" and math.isfinite(pred.M_c):
        print(f"M_c = {pred.M_c:.6f}")
    else:
        print(f"M_c = {pred.M_c!r}")
    for n in pred.notes:
        print(f"note: {n}")
    if args.out:
        d = _run_dir(args, "classify")
        _write_config(d, cfg)
        _json(d / "summary.json", {"mstar": ms, "class": cls.kind, "ell": _jnum(cls.ell), "L": _jnum(L),
                                   "regime": pred.regime, "M_c": _jnum(pred.M_c), "notes": pred.notes})
    return EXIT_OK


def _simulate(cfg, args, keep_fields=False):
    from .config import build_initial, build_sim_config
    from .solver import run

    sim = build_sim_config(cfg)
    if keep_fields:
        from dataclasses import replace

        sim = replace(sim, keep_fields=True)
    u0 = build_initial(cfg, sim)
    return sim, u0, run(sim, u0)


def _write_run(d: Path, cfg, sim, out) -> None:
    from .solver import diagnostics_csv, snapshot_csv

    _write_config(d, cfg)
    (d / "diagnostics.csv").write_text(diagnostics_csv(out.trajectory))
    kind = cfg.get("output", "snapshot")
    if kind == "csv":
        (d / "final.csv").write_text(snapshot_csv(out.final))
    elif kind == "binary":
        out.final.values.astype("<f8").tofile(d / "final.f64")
    _json(d / "grid.json", sim.grid.to_dict() | {"dtype": "<f8", "order": "C", "shape": list(sim.grid.shape)})
    _json(d / "outcome.json", {
        "status": out.status, "t_star": out.t_star, "message": out.message, "steps": out.steps,
        "t_final": out.trajectory[-1].t, "energy_violations": out.energy_violations, "min_u": out.min_u,
        "mass_drift": out.mass_drift, "q": out.q, "linf_max": max(r.linf for r in out.trajectory)})


def cmd_simulate(args, cfg) -> int:
    d = _run_dir(args, "simulate")
    sim, u0, out = _simulate(cfg, args)
    _write_run(d, cfg, sim, out)
    print(f"status: {out.status}")
    if out.t_star is not None:
        print(f"t* = {out.t_star!r}")
    print(f"steps: {out.steps}  mass drift: {out.mass_drift:.3e}  energy violations: {out.energy_violations}")
    print(f"output: {d}")
    return STATUS_EXIT.get(out.status, EXIT_ERROR)


def cmd_virial(args, cfg) -> int:
    from .experiments import virial_check

    d = _run_dir(args, "virial")
    sim, u0, out = _simulate(cfg, args, keep_fields=True)
    _write_run(d, cfg, sim, out)
    n = len(out.trajectory)
    window = (max(1, n // 4), max(2, 3 * n // 4))
    F0 = None
    if sim.kernel is not None:
        from .kernel import critical_exponent

        # the collapse bound is only meaningful for supercritical diffusion
        if classify_criticality(sim.diffusion, critical_exponent(sim.kernel)).kind == "supercritical":
            F0 = out.trajectory[0].F
    rep = virial_check(out, sim, window=window, F0=F0)
    rows = [("t", "dIdt", "rhs", "diffusion", "interaction", "boundary")]
    rows += [tuple(repr(float(x)) for x in r) for r in zip(rep.times, rep.dIdt, rep.rhs, rep.diffusion_term,
                                                            rep.interaction_term, rep.boundary)]
    _write_csv(d / "virial.csv", rows)
    tol = cfg.get("experiment", "virial_tol")
    print(f"max relative residual: {rep.max_residual:.4e} (tolerance {tol:g})")
    print(f"boundary term >= 0: {bool(np.all(rep.boundary >= 0))}")
    ok = rep.max_residual <= tol
    if F0 is not None:
        print(f"dI/dt <= 2d(m-1)F(u0) + C = {rep.bound:.6g}: {rep.bound_ok}")
        ok = ok and bool(rep.bound_ok)
    return EXIT_OK if ok else EXIT_ERROR


def cmd_sweep(args, cfg) -> int:
    from .config import build_sim_config
    from .experiments import ProtocolError, bisect_critical_mass

    sim = build_sim_config(cfg)
    lo, hi = cfg.get("experiment", "mass_lo"), cfg.get("experiment", "mass_hi")
    d = _run_dir(args, "sweep")
    _write_config(d, cfg)
    try:
        res = bisect_critical_mass(sim, (lo, hi), budget=cfg.get("experiment", "budget"),
                                   tol=cfg.get("experiment", "mass_tol", None),
                                   workers=args.threads or cfg.get("experiment", "workers"),
                                   min_cells=cfg.get("experiment", "min_cells"),
                                   support=cfg.get("experiment", "support", None),
                                   per_round=cfg.get("experiment", "per_round"))
    except ProtocolError as exc:
        _write_csv(d / "probes.csv", [("M", "status", "t_star", "linf_ratio")] +
                   [(repr(M), s, repr(t), repr(r)) for M, s, t, r in exc.log])
        _json(d / "outcome.json", {"status": "protocol_error", "message": str(exc)})
        print(f"protocol error: {exc}")
        return EXIT_PROTOCOL
    _write_csv(d / "probes.csv", res.summary_rows())
    summary = {"status": "bracket" if res.bracket else "no_bracket", "note": res.note,
               "bracket": list(res.bracket) if res.bracket else None, "predicted_M_c": _jnum(res.predicted)}
    _json(d / "outcome.json", summary)
    if res.bracket:
        print(f"bracket: [{res.bracket[0]:.6f}, {res.bracket[1]:.6f}]  predicted M_c = {res.predicted:.6f}")
    else:
        print(f"no finite bracket ({res.note}); predicted M_c = {res.predicted!r}")
    return EXIT_OK


def cmd_barenblatt(args, cfg) -> int:
    from .experiments import barenblatt_convergence

    mode = cfg.get("grid", "mode")
    d = _run_dir(args, "barenblatt")
    _write_config(d, cfg)
    tab = barenblatt_convergence(cfg.get("experiment", "m"), cfg.get("experiment", "resolutions"), mode,
                                 cfg.get("grid", "dimension"), cfg.get("grid", "length"),
                                 cfg.get("experiment", "t0"), cfg.get("experiment", "t1"),
                                 cfg.get("experiment", "barenblatt_c"))
    rows = [("n", "l1_error", "mass_error", "steps")]
    rows += [(str(n), repr(float(e)), repr(float(me)), str(s)) for n, e, me, s in
             zip(tab.resolutions, tab.errors, tab.mass_errors, tab.steps)]
    _write_csv(d / "convergence.csv", rows)
    for r in rows:
        print("  ".join(f"{c:>22}" for c in r))
    print(f"fitted order: {tab.order:.4f}")
    _json(d / "outcome.json", {"order": tab.order, "errors": tab.errors, "resolutions": list(tab.resolutions)})
    ok = bool(np.all(np.diff(tab.errors) < 0))
    return EXIT_OK if ok else EXIT_ERROR


COMMANDS = {
    "check-kernel": cmd_check_kernel, "classify": cmd_classify, "simulate": cmd_simulate,
    "sweep": cmd_sweep, "virial": cmd_virial, "barenblatt": cmd_barenblatt,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI file, or fixture:NAME for a packaged fixture")
    common.add_argument("--out", help=f"run directory (default ${OUTPUT_ROOT_ENV}/<command>-<config>)")
    common.add_argument("--threads", type=int, default=None, help="worker threads/processes")
    common.add_argument("--verbose", "-v", action="store_true")
    p = argparse.ArgumentParser(prog="aggdiff", description="Aggregation-diffusion simulation toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _accel.set_threads(args.threads)
    try:
        cfg = cfgmod.load(args.config)
        return COMMANDS[args.command](args, cfg)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # every other failure maps to the generic error code
        if args.verbose:
            log.exception("command failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

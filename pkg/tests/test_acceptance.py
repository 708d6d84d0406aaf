"""Acceptance criteria 1-12, one test each; a PASS/FAIL line per criterion is
printed in the terminal summary (or by running this file as a script)."""
import dataclasses
import math
import time

import numpy as np
import pytest

from aggdiff import config as C
from aggdiff import diffusion as D
from aggdiff import energy as E
from aggdiff import experiments as ex
from aggdiff import kernel as K
from aggdiff.convolution import build_conv_operator
from aggdiff.grid import GridField, GridHandle
from aggdiff.solver import SimConfig, diagnostics_csv, run

EIGHT_PI = 8 * math.pi
SIM_FIXTURES = ("heat2d", "pks2d_sub", "pks2d_super", "supercritical3d")
RESULTS: dict = {}
TITLES = {
    1: "critical exponent exactness",
    2: "PKS critical mass 8 pi",
    3: "entropy density oracle",
    4: "mass conservation and positivity",
    5: "free-energy dissipation",
    6: "Barenblatt convergence",
    7: "virial identity",
    8: "PKS dichotomy at 128^2",
    9: "empirical vs predicted critical mass",
    10: "HLS property suite",
    11: "blow-up candidate laws",
    12: "determinism",
}


def print_results(write=print):
    for n in sorted(TITLES):
        ok, detail = RESULTS.get(n, (None, "not run"))
        tag = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        write(f"criterion {n:2d} {tag}  {TITLES[n]}: {detail}")


class Criterion:
    """Record FAIL unless the block finishes; ``detail`` is filled in as it goes."""

    def __init__(self, n):
        self.n, self.detail = n, ""

    def __enter__(self):
        RESULTS[self.n] = (False, "raised before completion")
        return self

    def __exit__(self, typ, exc, tb):
        if typ is None:
            RESULTS[self.n] = (True, self.detail)
        else:
            msg = str(exc).splitlines()[0] if str(exc) else typ.__name__
            RESULTS[self.n] = (False, f"{self.detail} | {msg}"[:300])
        return False


def check(cond, msg):
    if not cond:
        raise AssertionError(msg)


# -- shared runs -----------------------------------------------------------------
_CACHE: dict = {}


def fixture_run(name):
    if name not in _CACHE:
        cfg = C.load(f"fixture:{name}")
        sim = C.build_sim_config(cfg)
        t0 = time.perf_counter()
        out = run(sim, C.build_initial(cfg, sim))
        _CACHE[name] = (cfg, sim, out, time.perf_counter() - t0)
    return _CACHE[name]


def barenblatt_table():
    if "barenblatt" not in _CACHE:
        cfg = C.load("fixture:barenblatt2d")
        t0 = time.perf_counter()
        tab = ex.barenblatt_convergence(cfg.get("experiment", "m"), cfg.get("experiment", "resolutions"),
                                        cfg.get("grid", "mode"), cfg.get("grid", "dimension"),
                                        cfg.get("grid", "length"), cfg.get("experiment", "t0"),
                                        cfg.get("experiment", "t1"), cfg.get("experiment", "barenblatt_c"))
        _CACHE["barenblatt"] = (tab, time.perf_counter() - t0)
    return _CACHE["barenblatt"]


def _random_config(rng, i):
    if i % 2 == 0:
        g = GridHandle.cartesian(int(rng.choice([16, 24, 32])), float(rng.uniform(3.0, 6.0)))
        kernels = [None, K.Logarithmic(2, 1 / (2 * math.pi), r_max=g.diameter),
                   K.Gaussian(2, float(rng.uniform(0.3, 1.0)), 1.0, r_max=g.diameter)]
    else:
        g = GridHandle.radial(int(rng.choice([64, 128])), float(rng.uniform(2.0, 5.0)), 3)
        kernels = [None, K.Newtonian(3, r_max=g.diameter),
                   K.Gaussian(3, float(rng.uniform(0.3, 1.0)), 1.0, r_max=g.diameter)]
    diffs = [D.PowerLaw(float(rng.uniform(1.2, 3.0))), D.SaturatedLinear(),
             D.PowerPlusLinear(float(rng.uniform(1.5, 2.5)), float(rng.uniform(0.2, 2.0)))]
    kern = kernels[int(rng.integers(len(kernels)))]
    diff = diffs[int(rng.integers(len(diffs)))]
    sim = SimConfig(diff, g, t_end=float(rng.uniform(0.01, 0.05)), kernel=kern, dt_max=1e-3, record_every=10)
    r = g.centers if g.is_radial else np.sqrt(g.r2)
    vals = np.zeros(g.shape)
    for _ in range(int(rng.integers(1, 4))):
        vals += rng.uniform(0.2, 2.0) * np.exp(-0.5 * ((r - rng.uniform(0, 0.3 * g.length)) /
                                                      rng.uniform(0.1, 0.3) / g.length) ** 2)
    vals *= float(rng.uniform(0.5, 5.0)) / float(np.sum(vals * g.volumes))
    return sim, GridField(vals, g)


# -- criteria ----------------------------------------------------------------------
def test_criterion_01_critical_exponent():
    with Criterion(1) as c:
        t0 = time.perf_counter()
        got = {"newtonian d=3": K.critical_exponent(K.Newtonian(3)),
               "newtonian d=4": K.critical_exponent(K.Newtonian(4)),
               "logarithmic": K.critical_exponent(K.Logarithmic(2, 1 / (2 * math.pi))),
               "gaussian": K.critical_exponent(K.Gaussian(2))}
        dt = time.perf_counter() - t0
        want = {"newtonian d=3": 4 / 3, "newtonian d=4": 3 / 2, "logarithmic": 1.0, "gaussian": 1.0}
        c.detail = ", ".join(f"{k} {v!r}" for k, v in got.items()) + f"; {dt:.3f} s"
        check(got == want, f"expected {want}")
        check(dt < 1.0, "runtime over 1 s")


def test_criterion_02_pks_critical_mass():
    with Criterion(2) as c:
        p = E.critical_mass(K.Logarithmic(2, 1 / (2 * math.pi)), D.SaturatedLinear())
        rel = abs(p.M_c - EIGHT_PI) / EIGHT_PI
        c.detail = f"M_c = {p.M_c!r}, relative error {rel:.2e}"
        check(rel <= 1e-6, "M_c not within 1e-6 of 8 pi")


def test_criterion_03_entropy_oracle():
    with Criterion(3) as c:
        t0 = time.perf_counter()
        z = np.geomspace(1e-3, 1e3, 2001)
        worst = 0.0
        for m in (4 / 3, 1.5, 2.0, 3.0):
            ref = (z ** m - m * z) / (m - 1)
            got = D.entropy_density(D.PowerLaw(m))(z)
            worst = max(worst, float(np.max(np.abs(got - ref) / np.abs(ref))))
        dt = time.perf_counter() - t0
        c.detail = f"max relative error {worst:.2e}; {dt:.2f} s"
        check(worst <= 1e-8 and dt < 10.0, "oracle mismatch or too slow")


def test_criterion_04_conservation_positivity(rng):
    with Criterion(4) as c:
        worst, min_u, runs = 0.0, math.inf, 0

        def account(out):
            nonlocal worst, min_u, runs
            # drift is normalised per 10^4 steps
            worst = max(worst, out.mass_drift / max(1.0, out.steps / 1e4))
            min_u = min(min_u, out.min_u)
            runs += 1

        for name in SIM_FIXTURES:
            account(fixture_run(name)[2])
        statuses = []
        for i in range(12):
            sim, u0 = _random_config(rng, i)
            out = run(sim, u0)
            statuses.append(out.status)
            account(out)
        c.detail = (f"{runs} runs ({len(SIM_FIXTURES)} fixtures, 12 random: "
                    f"{statuses.count('completed')} completed); worst drift/10^4 steps {worst:.2e}; "
                    f"min u {min_u:.3e}")
        check(worst <= 1e-12, "mass drift over 1e-12")
        check(min_u >= 0.0, "negative density")


def test_criterion_05_energy_dissipation():
    with Criterion(5) as c:
        viol = {name: fixture_run(name)[2].energy_violations for name in SIM_FIXTURES}
        tab, _ = barenblatt_table()
        viol["barenblatt"] = int(sum(tab.energy_violations))
        traj = fixture_run("heat2d")[2].trajectory
        t = np.array([r.t for r in traj])
        F = np.array([r.F for r in traj])
        Dv = np.array([r.D for r in traj])
        dFdt = np.gradient(F, t)
        mid = slice(len(t) // 4, 3 * len(t) // 4)
        rel = float(np.max(np.abs(Dv[mid] + dFdt[mid]) / np.abs(dFdt[mid])))
        c.detail = f"violations {viol}; heat mid-run max |D + dF/dt|/|dF/dt| = {rel:.2%}"
        check(sum(viol.values()) == 0, "energy violations present")
        check(rel <= 0.05, "heat dissipation mismatch over 5%")


def test_criterion_06_barenblatt():
    with Criterion(6) as c:
        tab, dt = barenblatt_table()
        c.detail = (f"L1 errors {', '.join(f'{e:.3e}' for e in tab.errors)} at {tab.resolutions}; "
                    f"order {tab.order:.3f}; {dt:.1f} s")
        check(tuple(tab.resolutions) == (64, 128, 256), "wrong resolutions")
        check(bool(np.all(np.diff(tab.errors) < 0)), "errors not strictly decreasing")
        check(tab.order >= 0.8 and dt < 300, "order below 0.8 or over 5 min")


def test_criterion_07_virial():
    with Criterion(7) as c:
        cfg = C.load("fixture:heat2d")
        sim = dataclasses.replace(C.build_sim_config(cfg), keep_fields=True)
        out = run(sim, C.build_initial(cfg, sim))
        n = len(out.trajectory)
        heat = ex.virial_check(out, sim, window=(n // 4, 3 * n // 4))
        homog = 0.0
        for g, spec in ((GridHandle.radial(64, 1.0, 3), K.PowerLaw(3, 1.0, 1.0, r_max=2.0)),
                        (GridHandle.radial(64, 1.0, 4), K.PowerLaw(4, 2.0, 1.5, r_max=2.0)),
                        (GridHandle.radial(48, 1.0, 3), K.Newtonian(3, r_max=2.0))):
            op = build_conv_operator(g, spec)
            a = spec.singularity.alpha
            homog = max(homog, float(np.max(np.abs(op.virial_table + a * op.weights)) /
                                     np.abs(op.weights).max()))
        cfg = C.load("fixture:supercritical3d")
        sim = dataclasses.replace(C.build_sim_config(cfg), keep_fields=True)
        out = run(sim, C.build_initial(cfg, sim))
        sup = ex.virial_check(out, sim, F0=out.trajectory[0].F)
        c.detail = (f"heat residual {heat.max_residual:.2%}; homogeneity error {homog:.1e}; "
                    f"supercritical max dI/dt {float(np.max(sup.dIdt)):.4g} <= bound {sup.bound:.4g}: "
                    f"{bool(sup.bound_ok)}")
        check(heat.max_residual <= 0.02, "heat virial residual over 2%")
        check(homog <= 1e-10, "homogeneity identity off")
        check(bool(sup.bound_ok), "supercritical bound violated")


def test_criterion_08_dichotomy():
    with Criterion(8) as c:
        _, sim, sub, t_sub = fixture_run("pks2d_sub")
        _, _, sup, t_sup = fixture_run("pks2d_super")
        ratio = max(r.linf for r in sub.trajectory) / sub.trajectory[0].linf
        c.detail = (f"{sim.grid.n}^2, T={sim.t_end:g}: 0.5*8pi {sub.status} with sup linf ratio {ratio:.3f} "
                    f"({t_sub:.0f} s); 1.5*8pi {sup.status} at t*={sup.t_star} ({t_sup:.0f} s)")
        check(sim.grid.n == 128 and sim.t_end == 10.0, "fixture is not 128^2 with T = 10")
        check(sub.status == "completed" and ratio <= 3.0, "subcritical run did not stay bounded")
        check(sup.status == "numerical_blowup", "supercritical run did not blow up")
        check(t_sub + t_sup <= 900, "over 15 min")


def test_criterion_09_empirical_critical_mass():
    with Criterion(9) as c:
        cfg = C.load("fixture:pks2d")
        base = C.build_sim_config(cfg)
        res = {}
        for n in (64, 128):
            sim = dataclasses.replace(base, grid=GridHandle.cartesian(n, cfg.get("grid", "length")))
            t0 = time.perf_counter()
            r = ex.bisect_critical_mass(sim, (cfg.get("experiment", "mass_lo"), cfg.get("experiment", "mass_hi")),
                                        budget=cfg.get("experiment", "budget"),
                                        tol=cfg.get("experiment", "mass_tol"),
                                        min_cells=cfg.get("experiment", "min_cells"),
                                        support=cfg.get("experiment", "support"))
            res[n] = (r, time.perf_counter() - t0)
        c.detail = "; ".join(
            f"{n}^2 bracket [{r.bracket[0] / EIGHT_PI:.4f}, {r.bracket[1] / EIGHT_PI:.4f}]*8pi ({t:.0f} s)"
            if r.bracket else f"{n}^2 no bracket" for n, (r, t) in res.items())
        r64, r128 = res[64][0], res[128][0]
        check(r64.bracket is not None and r128.bracket is not None, "no bracket")
        check(r128.width <= 0.1 * EIGHT_PI + 1e-9, "128^2 bracket wider than 0.1*8pi")
        check(r128.bracket[0] <= 1.2 * EIGHT_PI and r128.bracket[1] >= 0.8 * EIGHT_PI,
              "128^2 bracket misses [0.8, 1.2]*8pi")
        check(abs(r128.center - EIGHT_PI) < abs(r64.center - EIGHT_PI), "centre does not move toward 8 pi")


def test_criterion_10_hls(rng):
    with Criterion(10) as c:
        pinned = E.Cmstar(1.0, 3)
        est512 = E.estimate_Cmstar(1.0, 3, n=512)
        est1024 = E.estimate_Cmstar(1.0, 3, n=1024)
        g = est1024.grid
        r = g.centers
        worst = 0.0
        for _ in range(100):
            u = np.zeros(g.n)
            for _ in range(int(rng.integers(1, 5))):
                s = rng.uniform(0.05, 0.4)
                ctr = rng.uniform(0.0, 1.0 - s)
                u += rng.uniform(0.1, 1.0) * ex.bump((r - ctr) / s)
            worst = max(worst, E.hls_ratio(GridField(u, g), 1.0))
        spread = abs(est512.value - est1024.value) / est1024.value
        c.detail = (f"worst ratio {worst:.5f} vs pinned {pinned:.10f} ({worst / pinned:.4f}); "
                    f"estimator 512/1024: {est512.value:.8f}/{est1024.value:.8f}")
        check(worst <= pinned * (1 + 1e-3), "random mixture exceeds pinned constant")
        check(spread <= 0.02, "estimator unstable across resolutions")


def test_criterion_11_candidate_laws():
    with Criterion(11) as c:
        cfg = C.load("fixture:supercritical3d")
        sim = C.build_sim_config(cfg)
        M = cfg.get("experiment", "mass")
        conv = build_conv_operator(sim.grid, sim.kernel)
        phi = D.entropy_density(sim.diffusion)
        Fs, Is, merr = [], [], 0.0
        for lam in (1, 2, 4, 8):
            u = ex.make_blowup_candidate(ex.BlowupCandidateSpec(M, lam, 3), sim.grid)
            Fs.append(E.free_energy(u, phi, conv))
            Is.append(E.second_moment(u))
            merr = max(merr, abs(u.mass - M) / M)
        c.detail = (f"F {', '.join(f'{f:.5g}' for f in Fs)}; I {', '.join(f'{i:.5g}' for i in Is)}; "
                    f"mass error {merr:.1e}")
        check(all(b < a for a, b in zip(Fs, Fs[1:])), "F not strictly decreasing")
        check(all(b < a for a, b in zip(Is, Is[1:])), "I not strictly decreasing")
        check(merr <= 1e-10, "mass not constant")


def test_criterion_12_determinism():
    with Criterion(12) as c:
        same = {}
        for name in SIM_FIXTURES:
            cfg, sim, out, _ = fixture_run(name)
            again = run(C.build_sim_config(cfg), C.build_initial(cfg, sim))
            same[name] = diagnostics_csv(out.trajectory).encode() == diagnostics_csv(again.trajectory).encode()
        c.detail = ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items())
        check(all(same.values()), "diagnostics differ on rerun")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

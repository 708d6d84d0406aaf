"""Compare the numba and numpy backends on the flux kernel and on full runs.

Usage::

    python3 benchmarks/bench_backends.py [--repeat 20]

Both backends are called in-process through ``backend=``; the compiled
kernels are warmed up before timing.  Results are checked to agree.
"""
from __future__ import annotations

import argparse
import dataclasses
import time
import timeit

import numpy as np

from aggdiff import _accel, fv
from aggdiff import config as C
from aggdiff.grid import GridHandle
from aggdiff.solver import run


def _inputs(grid, rng):
    u = rng.random(grid.shape) + 0.1
    a = u * u  # A(u) = u^2
    if grid.is_radial:
        v = rng.standard_normal(grid.n - 1)  # interior faces only
    else:
        n = grid.n
        v = (rng.standard_normal((n - 1, n)), rng.standard_normal((n, n - 1)))
    return u, a, v


def bench_rhs(repeat: int) -> list:
    rng = np.random.default_rng(0)
    rows = []
    for grid in (GridHandle.cartesian(128, 8.0), GridHandle.cartesian(256, 8.0), GridHandle.radial(1024, 4.0, 3)):
        u, a, v = _inputs(grid, rng)
        ref = fv.rhs(grid, u, a, v, backend="numpy")
        got = fv.rhs(grid, u, a, v, backend="numba")  # also compiles
        err = max(float(np.max(np.abs(x - y))) for x, y in zip(ref, got))
        t = {}
        for b in ("numpy", "numba"):
            t[b] = min(timeit.repeat(lambda: fv.rhs(grid, u, a, v, backend=b), number=10, repeat=repeat)) / 10
        label = f"{grid.mode} n={grid.n}"
        rows.append((f"rhs {label}", t["numpy"], t["numba"], err))
    return rows


def bench_runs() -> list:
    rows = []
    for name in ("heat2d", "supercritical3d"):
        cfg = C.load(f"fixture:{name}")
        base = C.build_sim_config(cfg)
        u0 = C.build_initial(cfg, base)
        run(dataclasses.replace(base, backend="numba", t_end=base.t_end * 1e-3), u0)  # warm up
        t, fin = {}, {}
        for b in ("numpy", "numba"):
            t0 = time.perf_counter()
            out = run(dataclasses.replace(base, backend=b), u0)
            t[b] = time.perf_counter() - t0
            fin[b] = out.final.values
        err = float(np.max(np.abs(fin["numpy"] - fin["numba"])))
        rows.append((f"run {name} ({out.steps} steps)", t["numpy"], t["numba"], err))
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba unavailable or disabled (AGGDIFF_BACKEND=numpy); nothing to compare")
        return 1
    rows = bench_rhs(args.repeat) + bench_runs()
    print(f"{'case':<40} {'numpy [s]':>12} {'numba [s]':>12} {'speedup':>8} {'max |diff|':>11}")
    for case, tn, tb, err in rows:
        print(f"{case:<40} {tn:12.4e} {tb:12.4e} {tn / tb:8.2f} {err:11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

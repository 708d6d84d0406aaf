"""Finite-volume step, time step control, blow-up detection and run loop."""
import math

import numpy as np
import pytest

from aggdiff import config as C
from aggdiff import diffusion as D
from aggdiff import kernel as K
from aggdiff.convolution import build_conv_operator
from aggdiff.grid import GridField, GridHandle
from aggdiff.solver import (NegativeDensityError, SimConfig, SolverError, adaptive_dt, continuation_exponent,
                            detect_blowup, run, step, velocity)


def _brute_cart(u, dx, dt, A):
    """Straightforward loop: centred diffusive fluxes, zero flux through the walls."""
    n = u.shape[0]
    a = A(u)
    out = u.copy()
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for ii, jj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
                if 0 <= ii < n and 0 <= jj < n:
                    acc += (a[ii, jj] - a[i, j]) / dx
            out[i, j] = u[i, j] + dt * acc / dx
    return out


def _brute_radial(u, R, d, dt, A):
    n = u.size
    dx = R / n
    om = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    a = A(u)
    out = u.copy()
    for i in range(n):
        lo, hi = i * dx, (i + 1) * dx
        vol = om / d * (hi ** d - lo ** d)
        acc = 0.0
        if i + 1 < n:
            acc += om * hi ** (d - 1) * (a[i + 1] - a[i]) / dx
        if i > 0:
            acc -= om * lo ** (d - 1) * (a[i] - a[i - 1]) / dx
        out[i] = u[i] + dt * acc / vol
    return out


def _sq(z):
    return np.asarray(z) ** 2


def test_step_matches_brute_force_cartesian(rng):
    g = GridHandle.cartesian(8, 1.0)
    u = rng.random(g.shape)
    cfg = SimConfig(D.PowerLaw(2.0), g, t_end=1.0)
    dt = 1e-3
    new = step(GridField(u, g), dt, cfg).values
    ref = _brute_cart(u, g.dx, dt, _sq)
    assert np.max(np.abs(new - ref)) <= 1e-13 * np.abs(ref).max()


@pytest.mark.parametrize("d", [2, 3])
def test_step_matches_brute_force_radial(d, rng):
    g = GridHandle.radial(8, 1.0, d)
    u = rng.random(g.n)
    cfg = SimConfig(D.PowerLaw(2.0), g, t_end=1.0)
    dt = 1e-3
    new = step(GridField(u, g), dt, cfg).values
    ref = _brute_radial(u, 1.0, d, dt, _sq)
    assert np.max(np.abs(new - ref)) <= 1e-13 * np.abs(ref).max()


def test_backends_agree(rng):
    from aggdiff import HAVE_NUMBA
    if not HAVE_NUMBA:
        pytest.skip("numba not installed")
    for g in (GridHandle.cartesian(16, 2.0), GridHandle.radial(40, 1.0, 3)):
        u = GridField(rng.random(g.shape) + 0.1, g)
        k = K.Gaussian(g.dimension, 0.5, r_max=g.diameter)
        a = step(u, 1e-4, SimConfig(D.PowerLaw(1.5), g, 1.0, kernel=k, backend="numba")).values
        b = step(u, 1e-4, SimConfig(D.PowerLaw(1.5), g, 1.0, kernel=k, backend="numpy")).values
        assert np.allclose(a, b, rtol=1e-14, atol=0)


def test_constant_state_is_fixed():
    g = GridHandle.cartesian(10, 1.0)
    u = GridField(np.full(g.shape, 0.8), g)
    assert np.array_equal(step(u, 1e-3, SimConfig(D.PowerLaw(2.0), g, 1.0)).values, u.values)


@pytest.mark.parametrize("grid,kern", [
    (GridHandle.cartesian(16, 2.0), K.Logarithmic(2, 1.0, r_max=3.0)),
    (GridHandle.radial(64, 1.0, 3), K.Newtonian(3, r_max=2.0)),
])
def test_step_conserves_mass(grid, kern, rng):
    cfg = SimConfig(D.PowerLaw(1.5), grid, 1.0, kernel=kern)
    u = GridField(rng.random(grid.shape), grid)
    new = step(u, 1e-5, cfg)
    assert abs(new.mass - u.mass) <= 1e-14 * u.mass


def test_negative_step_raises():
    g = GridHandle.cartesian(8, 1.0)
    u = np.zeros(g.shape)
    u[4, 4] = 1.0
    with pytest.raises(NegativeDensityError):
        step(GridField(u, g), 10.0, SimConfig(D.PowerLaw(2.0), g, 1.0))


def test_config_validation():
    g = GridHandle.cartesian(8, 1.0)
    with pytest.raises(SolverError):
        SimConfig(D.PowerLaw(2.0), g, 1.0, dt_min=1e-2, dt_max=1e-3)
    with pytest.raises(SolverError):
        SimConfig(D.PowerLaw(2.0), g, 1.0, umax_factor=0.5)
    with pytest.raises(SolverError):
        SimConfig(D.PowerLaw(2.0), g, 1.0, kernel=K.Newtonian(3))


def test_velocity_examples():
    g = GridHandle.cartesian(16, 2.0)
    u = GridField(np.exp(-3 * g.r2), g)
    vx, vy = velocity(u, build_conv_operator(g, K.Logarithmic(2)))
    assert np.all(np.abs(vx[7]) <= 1e-14 * np.abs(vx).max())  # centre plane
    vx, vy = velocity(u, build_conv_operator(g, K.Constant(2, 2.0, r_max=g.diameter)))
    assert max(np.abs(vx).max(), np.abs(vy).max()) <= 1e-13
    zx, zy = velocity(u, None)
    assert not zx.any() and not zy.any()


def test_two_bump_velocity_points_inwards():
    g = GridHandle.cartesian(16, 2.0)
    x = g.centers
    X, Y = np.meshgrid(x, x, indexing="ij")
    u = np.exp(-30 * ((X - 0.55) ** 2 + Y ** 2)) + np.exp(-30 * ((X + 0.55) ** 2 + Y ** 2))
    vx, _ = velocity(GridField(u, g), build_conv_operator(g, K.Logarithmic(2)))
    # oracle: sub-sampled direct sum of grad K(x - y) m_y along the centre row
    h = g.dx
    sub = (np.arange(4) + 0.5) / 4 - 0.5
    fx = g.faces[1:-1]
    row = 8
    yf = x[row]
    for i, xf in enumerate(fx):
        acc = 0.0
        for a in range(16):
            for b in range(16):
                for s in sub:
                    for t in sub:
                        dxv, dyv = xf - (x[a] + s * h), yf - (x[b] + t * h)
                        r2 = dxv * dxv + dyv * dyv
                        acc += -dxv / (2 * math.pi * r2) * u[a, b] * h * h / 16
        if abs(acc) > 1e-2 * np.abs(vx[:, row]).max():
            assert np.sign(vx[i, row]) == np.sign(acc)
    # outside the pair every face is pulled towards the centre
    assert vx[:, row][fx < -0.7].min() > 0 and vx[:, row][fx > 0.7].max() < 0


def test_adaptive_dt_examples():
    g = GridHandle.cartesian(10, 1.0)  # dx = 0.1
    u = GridField(np.ones(g.shape), g)
    cfg = SimConfig(D.PowerLaw(2.0), g, 1.0, safety=0.4)
    assert adaptive_dt(u, velocity(u, None), cfg) == pytest.approx(5e-4, rel=1e-14)
    g2 = GridHandle.cartesian(20, 1.0)
    u2 = GridField(np.ones(g2.shape), g2)
    cfg2 = SimConfig(D.PowerLaw(2.0), g2, 1.0, safety=0.4)
    assert adaptive_dt(u2, velocity(u2, None), cfg2) == pytest.approx(5e-4 / 4, rel=1e-14)
    small = SimConfig(D.PowerLaw(2.0), g, 1.0, dt_max=1e-5, dt_min=1e-9)
    assert adaptive_dt(u, velocity(u, None), small) == 1e-5


def test_dt_floor_status():
    g = GridHandle.cartesian(16, 1.0)
    u = GridField(np.exp(-8 * g.r2), g)
    out = run(SimConfig(D.PowerLaw(2.0), g, 1.0, dt_min=1e-3, dt_max=1e-2), u)
    assert out.status == "dt_floor" and out.t_star is None


def test_continuation_exponent():
    g = GridHandle.radial(16, 1.0, 3)
    assert continuation_exponent(SimConfig(D.PowerLaw(2.0), g, 1.0)) == 1.0
    q = continuation_exponent(SimConfig(D.PowerLaw(1.1), g, 1.0, kernel=K.Newtonian(3)))
    assert q == pytest.approx((2 - 1.1) / (2 - 4 / 3), rel=1e-12)
    assert continuation_exponent(SimConfig(D.PowerLaw(1.1), g, 1.0, kernel=K.Newtonian(3), tail_q=2.5)) == 2.5


def test_detect_blowup_needs_both_tests():
    from aggdiff.energy import DiagnosticsRecord
    g = GridHandle.radial(8, 1.0, 3)
    cfg = SimConfig(D.PowerLaw(2.0), g, 1.0, umax_factor=10, tail_window=3, tail_k=(2.0,))

    def rec(t, linf, tail):
        return DiagnosticsRecord(t, 1.0, linf, {}, 0.0, 0.0, 0.0, 0.0, 0.0, {2.0: tail})
    grow = [rec(0, 1, 0), rec(1, 5, 1), rec(2, 11, 2), rec(3, 20, 3)]
    assert detect_blowup(grow, cfg) == ("numerical_blowup", 2)
    flat = [rec(0, 1, 0), rec(1, 5, 1), rec(2, 11, 2), rec(3, 20, 2)]
    assert detect_blowup(flat, cfg)[0] == "completed"
    low = [rec(0, 1, 0), rec(1, 5, 1), rec(2, 6, 2), rec(3, 7, 3)]
    assert detect_blowup(low, cfg)[0] == "completed"


def test_heat_only_never_blows_up():
    cfg = C.load("fixture:heat2d")
    sim = C.build_sim_config(cfg)
    out = run(sim, C.build_initial(cfg, sim))
    assert out.status == "completed"
    lin = [r.linf for r in out.trajectory]
    assert all(b <= a for a, b in zip(lin, lin[1:]))


def test_supercritical_blowup_and_dt_collapse():
    cfg = C.load("fixture:supercritical3d")
    sim = C.build_sim_config(cfg)
    out = run(sim, C.build_initial(cfg, sim))
    assert out.status == "numerical_blowup" and 0 < out.t_star < sim.t_end
    assert np.all(np.diff(out.dts) <= 0)
    assert out.energy_violations == 0 and out.mass_drift <= 1e-12


def test_subcritical_linf_bounded():
    g = GridHandle.radial(256, 3.0, 3)
    u = C.build_initial(C.loads("[experiment]\ninitial = gaussian\nmass = 20.0\nwidth = 0.4\n"),
                        SimConfig(D.PowerLaw(2.0), g, 1.0))
    out = run(SimConfig(D.PowerLaw(2.0), g, 0.5, kernel=K.Newtonian(3, r_max=6.0), record_every=50), u)
    assert out.status == "completed"
    M, l0 = u.mass, u.linf
    assert max(r.linf for r in out.trajectory) <= 3 * max(1.0, M, l0)


def test_symmetry_preserved(rng):
    g = GridHandle.cartesian(24, 2.0)
    base = rng.random((12, 12))
    q = np.block([[base, base[:, ::-1]], [base[::-1], base[::-1, ::-1]]])
    u0 = GridField(0.5 * (q + q.T), g)
    cfg = SimConfig(D.PowerLaw(2.0), g, 10.0, kernel=K.Logarithmic(2, 0.5, r_max=g.diameter),
                    max_steps=1000, record_every=1000)
    out = run(cfg, u0)
    v = out.final.values
    assert out.steps == 1000
    for w in (v[::-1], v[:, ::-1], v.T):
        assert np.max(np.abs(v - w)) <= 1e-12 * v.max()


def test_regularized_solutions_converge_linearly():
    g = GridHandle.cartesian(24, 2.0)
    u0 = GridField(np.exp(-6 * g.r2), g)
    finals = {}
    for e in (0.04, 0.02, 0.01):
        cfg = SimConfig(D.PowerLaw(2.0), g, 0.05, kernel=K.Logarithmic(2, 0.5, r_max=g.diameter), eps=e)
        finals[e] = run(cfg, u0).final.values
    d1 = np.sum(np.abs(finals[0.04] - finals[0.02]) * g.volumes)
    d2 = np.sum(np.abs(finals[0.02] - finals[0.01]) * g.volumes)
    Cest = d1 / 0.04
    assert d2 <= 1.25 * Cest * 0.02  # same constant at half the eps


def test_run_is_deterministic():
    cfg = C.load("fixture:heat2d")
    sim = C.build_sim_config(cfg)
    a = run(sim, C.build_initial(cfg, sim)).csv_text()
    b = run(sim, C.build_initial(cfg, sim)).csv_text()
    assert a == b

"""Explicit finite-volume integration with adaptive steps and blow-up detection.

Scheme: centred nonlinear diffusion flux ``-[A(u)]/dx`` plus first-order
upwind advection ``u_up v_f`` on interior faces, forward Euler in time.
Boundary faces carry no flux, so mass is conserved by telescoping.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import fv
from .convolution import ConvOperator, build_conv_operator
from .diffusion import DiffusionSpec, entropy_density, regularize
from .energy import DiagnosticsRecord, entropy_production, second_moment
from .grid import GridField, GridHandle
from .kernel import KernelSpec, critical_exponent


class SolverError(RuntimeError):
    pass


class NegativeDensityError(SolverError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Run parameters.

    ``kernel=None`` means ``K = 0``.  ``tail_k`` lists the levels of the
    continuation-criterion norm as multiples of ``linf(0)``.  ``energy_C``
    is the constant of the ``C dt^2`` slack in the dissipation check.
    """

    diffusion: DiffusionSpec
    grid: GridHandle
    t_end: float
    kernel: KernelSpec | None = None
    eps: float = 0.0
    dt_min: float = 1e-12
    dt_max: float = 1e-2
    safety: float = 0.4
    positivity_safety: float = 0.9
    umax_factor: float = 100.0
    tail_k: tuple = (2.0, 4.0, 8.0)
    tail_window: int = 5
    tail_q: float | None = None
    lp: tuple = (2.0,)
    record_every: int = 1
    max_steps: int = 10_000_000
    energy_C: float = 1e3
    stop_on_blowup: bool = True
    keep_fields: bool = False
    backend: str | None = None

    def __post_init__(self):
        if not (0 < self.dt_min < self.dt_max):
            raise SolverError("need 0 < dt_min < dt_max")
        if not (self.t_end > 0 and self.safety > 0 and self.umax_factor > 1):
            raise SolverError("t_end, safety must be positive and umax_factor > 1")
        if self.eps < 0:
            raise SolverError("eps must be >= 0")
        if self.record_every < 1 or self.tail_window < 2 or not self.tail_k:
            raise SolverError("record_every >= 1, tail_window >= 2 and a non-empty tail_k are required")
        if self.kernel is not None and self.kernel.dimension != self.grid.dimension:
            raise SolverError("kernel dimension does not match the grid")


@dataclass
class RunOutcome:
    status: str  # completed | numerical_blowup | dt_floor | error
    trajectory: list
    final: GridField
    t_star: float | None = None
    message: str = ""
    steps: int = 0
    energy_violations: int = 0
    min_u: float = 0.0
    mass_drift: float = 0.0
    q: float = 1.0
    dts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fields: list | None = None

    def csv_text(self) -> str:
        return diagnostics_csv(self.trajectory)


# -- building blocks -----------------------------------------------------------------
def velocity(u: GridField, conv: ConvOperator | None, psi=None):
    """Face-normal ``grad K * u`` on interior faces (``0`` for ``K = 0``)."""
    g = u.grid
    if conv is None:
        if g.is_radial:
            return np.zeros(g.n - 1)
        return np.zeros((g.n - 1, g.n)), np.zeros((g.n, g.n - 1))
    if conv.grid != g:
        raise SolverError("operator was built on a different grid")
    return conv.face_velocity(u.values, psi=psi)


def _vmax(v):
    if isinstance(v, tuple):
        return max(float(np.max(np.abs(v[0]), initial=0.0)), float(np.max(np.abs(v[1]), initial=0.0)))
    return float(np.max(np.abs(v), initial=0.0))


def adaptive_dt(u: GridField, v, config: SimConfig, A: DiffusionSpec | None = None) -> float:
    """``safety * min(dx^2/(2 dim max a'), dx/max|v|)`` capped at ``dt_max``.

    Values below ``dt_min`` are returned as is; the caller escalates them.
    """
    A = A or effective_diffusion(config)
    h = u.grid.dx
    amax = float(np.max(A.dA(u.values)))
    vmax = _vmax(v)
    cand = [config.dt_max]
    if amax > 0:
        cand.append(config.safety * h * h / (2.0 * u.grid.dimension * amax))
    if vmax > 0:
        cand.append(config.safety * h / vmax)
    return min(cand)


def effective_diffusion(config: SimConfig) -> DiffusionSpec:
    return regularize(config.diffusion, config.eps) if config.eps > 0 else config.diffusion


def _rates(grid, vals, A, conv, backend):
    psi = conv.potential(vals) if conv is not None else None
    v = velocity(GridField.trusted(vals, grid), conv, psi)
    rate, out = fv.rhs(grid, vals, A.A(vals), v, backend)
    return psi, v, rate, out


def step(u: GridField, dt: float, config: SimConfig, conv: ConvOperator | None = None) -> GridField:
    """One explicit Euler step; raises :class:`NegativeDensityError` on a negative cell."""
    A = effective_diffusion(config)
    if conv is None and config.kernel is not None:
        conv = build_conv_operator(u.grid, config.kernel)
    _, _, rate, _ = _rates(u.grid, u.values, A, conv, config.backend)
    new = u.values + dt * rate
    if np.any(new < 0):
        i = int(np.argmin(new))
        raise NegativeDensityError(f"negative density {new.flat[i]:.3e} at cell {i} (dt={dt:.3e})")
    return GridField(new, u.grid, dict(u.meta))


def tail_norm(vals, vol, k: float, q: float) -> float:
    """``||(u - k)_+||_q``."""
    e = np.maximum(vals - k, 0.0)
    return float(np.sum(e ** q * vol) ** (1.0 / q))


def continuation_exponent(config: SimConfig) -> float:
    """``q = (2 - m)/(2 - m*)`` with ``m`` the fitted diffusion tail exponent, floored at 1."""
    if config.tail_q is not None:
        return float(config.tail_q)
    if config.kernel is None:
        return 1.0
    m = config.diffusion.tail_exponent()
    ms = critical_exponent(config.kernel)
    if ms >= 2.0:
        return 1.0
    return max(1.0, (2.0 - m) / (2.0 - ms))


def detect_blowup(trajectory: list, config: SimConfig, linf0: float | None = None):
    """``(status, t_star)`` from the recorded trajectory.

    Numerical blow-up needs both ``linf > umax_factor * linf(0)`` and a tail
    norm (largest configured level) strictly increasing over the last
    ``tail_window`` records.
    """
    if len(trajectory) < 2:
        return "completed", None
    linf0 = trajectory[0].linf if linf0 is None else linf0
    thr = config.umax_factor * linf0
    if trajectory[-1].linf <= thr:
        return "completed", None
    kmax = max(trajectory[-1].tails)
    w = trajectory[-config.tail_window:]
    if len(w) < config.tail_window:
        return "completed", None
    series = np.array([r.tails[kmax] for r in w])
    if not np.all(np.diff(series) > 0):
        return "completed", None
    t_star = next(r.t for r in trajectory if r.linf > thr)
    return "numerical_blowup", t_star


def edge_band(grid: GridHandle) -> np.ndarray:
    """Mask of the outer boundary band used for the mass-escape monitor."""
    w = max(1, grid.n // 32)
    if grid.is_radial:
        m = np.zeros(grid.n, bool)
        m[-w:] = True
        return m
    m = np.ones(grid.shape, bool)
    m[w:-w, w:-w] = False
    return m


class Simulator:
    """Holds the operator, entropy density and scratch state of one run."""

    def __init__(self, config: SimConfig, conv: ConvOperator | None = None):
        self.config = config
        self.grid = config.grid
        self.A = effective_diffusion(config)
        self.phi = entropy_density(self.A, strict=False)
        if conv is None and config.kernel is not None:
            conv = build_conv_operator(self.grid, config.kernel)
        self.conv = conv
        self.q = continuation_exponent(config)
        self._edge = edge_band(self.grid)

    def record(self, vals, t, dt, step_no, psi, linf0) -> DiagnosticsRecord:
        g = self.grid
        vol = g.volumes
        u = GridField.trusted(vals, g)
        S = float(np.sum(self.phi(vals) * vol))
        W = 0.5 * float(np.sum(vals * psi * vol)) if psi is not None else 0.0
        lp = {p: float(np.sum(vals ** p * vol) ** (1.0 / p)) for p in self.config.lp}
        tails = {k: tail_norm(vals, vol, k * linf0, self.q) for k in self.config.tail_k}
        return DiagnosticsRecord(
            t=t, mass=float(np.sum(vals * vol)), linf=float(vals.max()), lp=lp, S=S, W=W,
            I=second_moment(u), D=entropy_production(u, self.A, self.conv, g, self.phi, psi=psi),
            dt_used=dt, tails=tails, edge_mass=float(np.sum((vals * vol)[self._edge])), step=step_no)

    def run(self, u0: GridField) -> RunOutcome:
        cfg = self.config
        if u0.grid != self.grid:
            raise SolverError("initial field lives on a different grid")
        vals = u0.values.copy()
        vol = self.grid.volumes
        linf0 = float(vals.max())
        if not linf0 > 0:
            raise SolverError("initial density is identically zero")
        mass0 = float(np.sum(vals * vol))
        t, n = 0.0, 0
        psi = self.conv.potential(vals) if self.conv is not None else None
        traj = [self.record(vals, t, 0.0, 0, psi, linf0)]
        fields = [GridField(vals.copy(), self.grid)] if cfg.keep_fields else None
        dts = []
        status, t_star, msg = "completed", None, ""
        violations = 0
        dt_acc = 0.0
        min_u = float(vals.min())
        C = cfg.energy_C
        while t < cfg.t_end * (1 - 1e-14):
            if n >= cfg.max_steps:
                status, msg = "completed", f"max_steps={cfg.max_steps} reached at t={t:.6g}"
                break
            psi, v, rate, out = _rates(self.grid, vals, self.A, self.conv, cfg.backend)
            dt = adaptive_dt(GridField.trusted(vals, self.grid), v, cfg, self.A)
            pos = out > 0
            if np.any(pos):
                dt = min(dt, cfg.positivity_safety * float(np.min(vals[pos] / out[pos])))
            dt = min(dt, cfg.t_end - t)
            if dt < cfg.dt_min and t + dt < cfg.t_end * (1 - 1e-14):
                status, msg = "dt_floor", f"dt={dt:.3e} below dt_min at t={t:.6g}"
                break
            new = vals + dt * rate
            if np.any(new < 0):
                i = int(np.argmin(new))
                raise NegativeDensityError(f"negative density {new.flat[i]:.3e} at cell {i} (t={t:.6g}, dt={dt:.3e})")
            vals = new
            t += dt
            n += 1
            dts.append(dt)
            dt_acc += dt * dt
            min_u = min(min_u, float(vals.min()))
            last = t >= cfg.t_end * (1 - 1e-14)
            if n % cfg.record_every == 0 or last:
                psi = self.conv.potential(vals) if self.conv is not None else None
                rec = self.record(vals, t, dt, n, psi, linf0)
                prev = traj[-1]
                if rec.F > prev.F + 1e-8 * (1 + abs(prev.F)) + C * dt_acc:
                    violations += 1
                dt_acc = 0.0
                traj.append(rec)
                if fields is not None:
                    fields.append(GridField(vals.copy(), self.grid))
                st, ts = detect_blowup(traj, cfg, linf0)
                if st == "numerical_blowup":
                    status, t_star = st, ts
                    msg = f"linf={rec.linf:.4g} exceeds {cfg.umax_factor:g} x linf(0) with growing tail norm"
                    if cfg.stop_on_blowup:
                        break
        if traj[-1].step != n:
            psi = self.conv.potential(vals) if self.conv is not None else None
            traj.append(self.record(vals, t, dts[-1] if dts else 0.0, n, psi, linf0))
            if fields is not None:
                fields.append(GridField(vals.copy(), self.grid))
        mass = float(np.sum(vals * vol))
        return RunOutcome(status, traj, GridField(vals, self.grid), t_star, msg, n, violations, min_u,
                          abs(mass - mass0) / mass0, self.q, np.asarray(dts), fields)


def run(config: SimConfig, u0: GridField, conv: ConvOperator | None = None) -> RunOutcome:
    """Integrate ``u0`` to ``config.t_end`` (or until blow-up / dt floor).

    Deterministic for a fixed configuration.
    """
    return Simulator(config, conv).run(u0)


# -- output ------------------------------------------------------------------------
BASE_COLUMNS = ("step", "t", "dt_used", "mass", "linf", "S", "W", "F", "I", "D", "edge_mass")


def diagnostics_columns(rec: DiagnosticsRecord) -> list:
    return (list(BASE_COLUMNS) + [f"lp_{p:g}" for p in rec.lp] + [f"tail_{k:g}" for k in rec.tails])


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def diagnostics_csv(trajectory: list) -> str:
    """Fixed column order: ``BASE_COLUMNS`` then ``lp_<p>`` then ``tail_<k>``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if not trajectory:
        return ""
    w.writerow(diagnostics_columns(trajectory[0]))
    for r in trajectory:
        row = [r.step, r.t, r.dt_used, r.mass, r.linf, r.S, r.W, r.F, r.I, r.D, r.edge_mass]
        row += [r.lp[p] for p in r.lp] + [r.tails[k] for k in r.tails]
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def snapshot_csv(u: GridField) -> str:
    vals = np.atleast_2d(u.values) if u.grid.is_radial else u.values
    buf = io.StringIO()
    for row in vals:
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()

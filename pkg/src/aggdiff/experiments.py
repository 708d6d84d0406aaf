"""Executable experiments: blow-up candidates, mass sweeps, virial and
Barenblatt checks."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .convolution import build_conv_operator
from .diffusion import DiffusionSpec, PowerLaw, entropy_density
from .energy import critical_mass, free_energy, second_moment
from .grid import GridField, GridHandle
from .kernel import KernelSpec, singularity_coefficient, sphere_area
from .solver import RunOutcome, SimConfig, effective_diffusion, run


class ExperimentError(RuntimeError):
    pass


class ResolutionError(ExperimentError):
    """The lambda ladder ran past what the grid can resolve."""

    def __init__(self, msg, achieved=None):
        super().__init__(msg)
        self.achieved = achieved


class ProtocolError(ExperimentError):
    def __init__(self, msg, log=None):
        super().__init__(msg)
        self.log = log or []


# -- blow-up candidates ------------------------------------------------------------
def bump(r):
    """``exp(-1/(1 - r^2))`` on the unit ball, zero outside."""
    r = np.asarray(r, float)
    out = np.zeros(r.shape)
    m = np.abs(r) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - r[m] ** 2))
    return out


def bump_mass(d: int) -> float:
    val, _ = integrate.quad(lambda r: math.exp(-1.0 / (1.0 - r * r)) * r ** (d - 1), 0.0, 1.0,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return sphere_area(d) * val


@dataclass(frozen=True)
class BlowupCandidateSpec:
    """``h_lam(x) = lam^d h*(lam mu x)`` with ``mu = (||h*||_1/M)^{1/d}``."""

    M: float
    lam: float
    d: int = 2

    @property
    def mu(self) -> float:
        return (bump_mass(self.d) / self.M) ** (1.0 / self.d)

    @property
    def support_radius(self) -> float:
        return 1.0 / (self.lam * self.mu)


def _cell_average(f, grid: GridHandle, order: int = 4) -> np.ndarray:
    """Gauss-Legendre cell averages of a radial function ``f(|x|)``."""
    x, w = np.polynomial.legendre.leggauss(order)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    h = grid.dx
    if grid.is_radial:
        d = grid.dimension
        lo = grid.faces[:-1, None]
        r = lo + h * x[None, :]
        wr = w[None, :] * r ** (d - 1)
        return (f(r) * wr).sum(1) / wr.sum(1)
    c = grid.faces[:-1, None] + h * x[None, :]  # (n, order)
    X = c[:, None, :, None]
    Y = c[None, :, None, :]
    vals = f(np.sqrt(X * X + Y * Y))
    return np.einsum("ijab,a,b->ij", vals, w, w)


def make_blowup_candidate(spec: BlowupCandidateSpec, grid: GridHandle) -> GridField:
    """Cell averages of ``h_lam`` rescaled to mass exactly ``M``.

    Raises
    ------
    ExperimentError
        If the support leaves the domain or covers no cell.
    """
    if spec.d != grid.dimension:
        raise ExperimentError("candidate dimension does not match the grid")
    a = spec.support_radius
    half = grid.length if grid.is_radial else 0.5 * grid.length
    if a > half:
        raise ExperimentError(f"support radius {a:.4g} exceeds the domain ({half:.4g})")
    lam, mu, d = spec.lam, spec.mu, spec.d
    vals = _cell_average(lambda r: lam ** d * bump(lam * mu * r), grid)
    mass = float(np.sum(vals * grid.volumes))
    if not mass > 0:
        raise ExperimentError("support is below the grid resolution")
    vals *= spec.M / mass
    return GridField(vals, grid, {"M": spec.M, "lambda": lam, "mu": mu, "support_radius": a})


# -- virial constants ------------------------------------------------------------------
@dataclass
class VirialConstants:
    m: float
    C1: float
    C_A: float  # C(M) from the A-integral bound, per unit mass
    R: float
    beta: float
    C: float  # C(M, C1)
    threshold: float  # F(u0) must fall below this
    rate_bound: float = math.nan  # m = 1 branch: sup dI/dt per unit I-free bound

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def measure_C1(kernel: KernelSpec, r_max: float, n: int = 4000) -> float:
    """Largest positive part of ``r k'(r) + (d/p) k(r)`` on ``(0, r_max]``."""
    kind, _, alpha = singularity_coefficient(kernel)
    a = alpha if kind == "power" else 0.0
    r = np.geomspace(r_max * 1e-8, r_max, n)
    k, dk = kernel.profile(r, 0), kernel.profile(r, 1)
    q = r * dk + a * k
    return float(max(0.0, np.max(q)))


def virial_constants(M: float, kernel: KernelSpec, diff: DiffusionSpec, d: int, r_max: float,
                     R: float = 1.0) -> VirialConstants:
    """Constants of ``dI/dt <= 2d(m-1)F + C(M, C1)``.

    The growth condition ``A <= (m-1) Phi`` is applied to ``Phi + beta z`` (the linear shift only adds
    ``beta M`` to ``F``), with ``beta`` the smallest shift valid for
    ``z >= R`` on the tail grid:
    ``int A <= a_R M + (m-1)(S + (phi_R + beta) M)`` where
    ``a_R = sup_{z<R} A/z`` and ``phi_R = sup_{z<R} (-Phi/z)``.
    """
    m = diff.tail_exponent()
    C1 = measure_C1(kernel, r_max)
    phi = entropy_density(diff, strict=False)
    zs = np.geomspace(1e-12 * R, R, 400)
    a_R = float(np.max(diff.A(zs) / zs))
    # -Phi/z -> -h(0) as z -> 0, often the supremum and approached slowly
    h0 = float(phi.h(np.array(0.0)))
    phi_R = float(max(0.0, np.max(-phi(zs) / zs), -h0 if math.isfinite(h0) else 0.0))
    if m > 1.0 + 1e-9:
        zl = np.geomspace(R, 1e8, 400)
        beta = float(max(0.0, np.max((diff.A(zl) / (m - 1.0) - phi(zl)) / zl)))
        C_A = a_R + (m - 1.0) * (phi_R + beta)
        C = 2.0 * d * C_A * M + C1 * M * M
        thr = -C / (2.0 * d * (m - 1.0))
        return VirialConstants(m, C1, C_A, R, beta, C, thr)
    # m = 1: dI/dt <= 2d sup(A/z) M + sup(r k') M^2, independent of F
    zl = np.geomspace(1e-12, 1e8, 800)
    a_sup = float(np.max(diff.A(zl) / zl))
    r = np.geomspace(r_max * 1e-8, r_max, 4000)
    rk = float(np.max(r * kernel.profile(r, 1)))
    rate = 2.0 * d * a_sup * M + rk * M * M
    thr = math.inf if rate < 0 else -math.inf
    return VirialConstants(m, C1, a_sup, R, 0.0, rate, thr, rate)


def default_ladder(lam0: float = 1.0, ratio: float = 2.0, count: int = 16):
    return tuple(lam0 * ratio ** k for k in range(count))


def feasible_candidates(M: float, grid: GridHandle, ladder=None, min_cells: float = 8.0):
    """``(lam, field)`` pairs on the ladder whose support fits the domain and spans
    at least ``min_cells`` cells in radius."""
    ladder = ladder or default_ladder()
    out = []
    for lam in ladder:
        spec = BlowupCandidateSpec(M, lam, grid.dimension)
        if spec.support_radius < min_cells * grid.dx:
            break
        try:
            out.append((lam, make_blowup_candidate(spec, grid)))
        except ExperimentError:
            continue
    return out


def find_blowup_initial_data(M: float, config: SimConfig, ladder=None, min_cells: float = 8.0,
                             most_concentrated: bool = False):
    """Ladder search over ``lam`` for ``F(h_lam)`` below the virial threshold.

    Returns ``(field, info)``.  The first qualifying field is returned unless
    ``most_concentrated`` is set.

    Raises
    ------
    ResolutionError
        Ladder exhausted; ``achieved`` carries the lowest ``F`` reached.
    """
    k = config.kernel
    if k is None:
        raise ExperimentError("blow-up data needs an interaction kernel")
    grid = config.grid
    A = effective_diffusion(config)
    phi = entropy_density(A, strict=False)
    conv = build_conv_operator(grid, k)
    vc = virial_constants(M, k, A, grid.dimension, grid.diameter)
    cands = feasible_candidates(M, grid, ladder, min_cells)
    if not cands:
        raise ResolutionError("no feasible candidate on the ladder", None)
    log = []
    hits = []
    for lam, u in cands:
        F = free_energy(u, phi, conv)
        log.append((lam, F))
        if F < vc.threshold:
            hits.append((lam, u, F))
            if not most_concentrated:
                break
    if not hits:
        best = min(log, key=lambda t: t[1])
        raise ResolutionError(
            f"ladder exhausted: min F = {best[1]:.6g} at lambda = {best[0]:g}, threshold {vc.threshold:.6g}",
            achieved=best)
    lam, u, F = hits[-1]
    return u, {"lambda": lam, "F": F, "threshold": vc.threshold, "constants": vc.as_dict(), "ladder": log}


# -- sweeps ------------------------------------------------------------------------------
@dataclass
class SweepResult:
    bracket: tuple | None
    probes: list  # (M, status, t_star, linf_ratio)
    predicted: float
    outcomes: dict = field(default_factory=dict)
    note: str = ""

    @property
    def center(self) -> float:
        return 0.5 * (self.bracket[0] + self.bracket[1]) if self.bracket else math.nan

    @property
    def width(self) -> float:
        return self.bracket[1] - self.bracket[0] if self.bracket else math.inf

    def summary_rows(self):
        rows = [("M", "status", "t_star", "linf_ratio")]
        rows += [(repr(M), s, repr(t) if t is not None else "", repr(r)) for M, s, t, r in self.probes]
        return rows


def probe_data(M: float, config: SimConfig, min_cells: float = 8.0, support: float | None = None):
    """Most concentrated feasible candidate and its threshold diagnostics.

    ``support`` fixes the physical support radius (resolution independent);
    by default it is ``min_cells`` cells.  Supports thinner than
    ``min_cells`` cells raise :class:`ResolutionError`.
    """
    g = config.grid
    a = min_cells * g.dx if support is None else float(support)
    if a < min_cells * g.dx * (1 - 1e-12):
        raise ResolutionError(f"support radius {a:.4g} is below {min_cells:g} cells")
    lam = 1.0 / (BlowupCandidateSpec(M, 1.0, g.dimension).mu * a)
    u = make_blowup_candidate(BlowupCandidateSpec(M, lam, g.dimension), g)
    info = {"lambda": lam, "support_radius": a}
    if config.kernel is not None:
        A = effective_diffusion(config)
        vc = virial_constants(M, config.kernel, A, g.dimension, g.diameter)
        F = free_energy(u, entropy_density(A, strict=False), build_conv_operator(g, config.kernel))
        info.update(F=F, threshold=vc.threshold, qualifies=bool(F < vc.threshold))
    return u, info


def _probe(args):
    M, config, min_cells, support = args
    u0, _ = probe_data(M, config, min_cells, support)
    out = run(config, u0)
    ratio = max(r.linf for r in out.trajectory) / out.trajectory[0].linf
    return M, out.status, out.t_star, ratio


def _run_probes(masses, config, min_cells, support, workers):
    jobs = [(M, config, min_cells, support) for M in masses]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            return list(ex.map(_probe, jobs))
    return [_probe(j) for j in jobs]


def bisect_critical_mass(config: SimConfig, M_range: tuple, budget: int = 12, tol: float | None = None,
                         workers: int = 1, min_cells: float = 8.0, support: float | None = None,
                         per_round: int | None = None) -> SweepResult:
    """Bracket the empirical critical mass by outcome bisection.

    Each round probes ``per_round`` equally spaced interior masses
    concurrently and keeps the sub-interval between the last completion and
    the first blow-up.  Rounds stop when the width is at most ``tol`` or
    ``budget`` probes have been spent.

    Raises
    ------
    ProtocolError
        A blow-up occurs at a mass below a completed probe, or the lower end
        of the range blows up.
    """
    k = config.kernel
    lo, hi = map(float, M_range)
    if not (0 < lo < hi):
        raise ExperimentError("need 0 < M_lo < M_hi")
    tol = tol if tol is not None else 0.05 * (hi - lo)
    per_round = per_round or max(1, workers)
    try:
        pred = critical_mass(k, config.diffusion).M_c
    except (ValueError, RuntimeError):  # prediction is informative only
        pred = math.nan
    log = []

    def check(results):
        log.extend(results)
        done = sorted(log)
        blown = [M for M, s, _, _ in done if s == "numerical_blowup"]
        comp = [M for M, s, _, _ in done if s == "completed"]
        if blown and comp and min(blown) < max(comp):
            raise ProtocolError(f"non-monotone outcomes: blow-up at {min(blown):.6g} below completion at "
                                f"{max(comp):.6g}", log=done)
        bad = [(M, s) for M, s, _, _ in results if s not in ("completed", "numerical_blowup")]
        if bad:
            raise ProtocolError(f"inconclusive probe outcomes {bad}", log=done)

    check(_run_probes([lo, hi], config, min_cells, support, workers))
    spent = 2
    st = dict((M, s) for M, s, _, _ in log)
    if st[lo] != "completed":
        raise ProtocolError(f"lower end M={lo:.6g} does not complete ({st[lo]})", log=sorted(log))
    if st[hi] != "numerical_blowup":
        return SweepResult(None, sorted(log), pred, note="no finite bracket: every probe completed")
    while hi - lo > tol and spent < budget:
        n = min(per_round, budget - spent)
        masses = [lo + (hi - lo) * (j + 1) / (n + 1) for j in range(n)]
        res = _run_probes(masses, config, min_cells, support, workers)
        spent += n
        check(res)
        for M, s, _, _ in sorted(res):
            if s == "completed":
                lo = max(lo, M)
        hi = min([M for M, s, _, _ in log if s == "numerical_blowup"])
    return SweepResult((lo, hi), sorted(log), pred)


# -- virial check -----------------------------------------------------------------
@dataclass
class VirialReport:
    max_residual: float
    times: np.ndarray
    dIdt: np.ndarray
    rhs: np.ndarray
    boundary: np.ndarray
    diffusion_term: np.ndarray
    interaction_term: np.ndarray
    bound_ok: bool | None = None
    bound: float | None = None


def boundary_term(u: GridField, A: DiffusionSpec) -> float:
    """``int_{dD} A(u) x.nu dS`` from the outermost cells (always >= 0)."""
    g = u.grid
    a = A.A(u.values)
    if g.is_radial:
        R = g.length
        return float(a[-1] * R * sphere_area(g.dimension) * R ** (g.dimension - 1))
    half = 0.5 * g.length
    edge = a[0, :].sum() + a[-1, :].sum() + a[:, 0].sum() + a[:, -1].sum()
    return float(edge * half * g.dx)


def virial_terms(u: GridField, config: SimConfig, conv=None):
    A = effective_diffusion(config)
    g = u.grid
    vol = g.volumes
    dterm = 2.0 * g.dimension * float(np.sum(A.A(u.values) * vol))
    if config.kernel is None:
        iterm = 0.0
    else:
        conv = conv or build_conv_operator(g, config.kernel)
        iterm = float(np.sum(u.values * conv.virial_potential(u.values) * vol))
    return dterm, iterm, boundary_term(u, A)


def virial_check(run_out: RunOutcome, config: SimConfig, window=None, F0: float | None = None,
                 slack: float = 0.0) -> VirialReport:
    """Centred ``dI/dt`` against ``2d int A + int int (x-y).grad K u u - boundary``.

    Needs a run made with ``keep_fields=True``.  With ``F0`` given the
    supercritical bound ``dI/dt <= 2d(m-1)F0 + C`` is also checked.
    """
    traj = run_out.trajectory
    fields = run_out.fields
    if fields is None or len(traj) < 3:
        raise ExperimentError("virial check needs at least 3 recorded fields")
    idx = range(1, len(traj) - 1) if window is None else range(*window)
    idx = [i for i in idx if 1 <= i < len(traj) - 1]
    if not idx:
        raise ExperimentError("virial window too short")
    conv = build_conv_operator(config.grid, config.kernel) if config.kernel is not None else None
    ts, dI, rhs, bnd, dts, its = [], [], [], [], [], []
    for i in idx:
        dt = traj[i + 1].t - traj[i - 1].t
        dI.append((traj[i + 1].I - traj[i - 1].I) / dt)
        dterm, iterm, b = virial_terms(fields[i], config, conv)
        ts.append(traj[i].t)
        rhs.append(dterm + iterm - b)
        bnd.append(b)
        dts.append(dterm)
        its.append(iterm)
    dI, rhs = np.array(dI), np.array(rhs)
    scale = np.maximum(np.abs(dI), 1e-300)
    res = float(np.max(np.abs(dI - rhs) / scale))
    rep = VirialReport(res, np.array(ts), dI, rhs, np.array(bnd), np.array(dts), np.array(its))
    if F0 is not None:
        M = traj[0].mass
        vc = virial_constants(M, config.kernel, effective_diffusion(config), config.grid.dimension,
                              config.grid.diameter)
        rep.bound = 2.0 * config.grid.dimension * (vc.m - 1.0) * F0 + vc.C
        rep.bound_ok = bool(np.all(dI <= rep.bound + slack))
    return rep


# -- Barenblatt ------------------------------------------------------------------------------
def barenblatt(r, t, m: float, d: int, C: float = 1.0):
    """Source-type solution of ``u_t = Delta u^m``."""
    a = d / (d * (m - 1.0) + 2.0)
    b = a / d
    k = a * (m - 1.0) / (2.0 * m * d)
    r = np.asarray(r, float)
    base = C - k * r * r * t ** (-2.0 * b)
    return t ** (-a) * np.maximum(base, 0.0) ** (1.0 / (m - 1.0))


@dataclass
class ConvergenceTable:
    resolutions: tuple
    errors: np.ndarray
    mass_errors: np.ndarray
    order: float
    steps: tuple
    energy_violations: tuple = ()


def barenblatt_convergence(m: float = 2.0, resolutions=(64, 128, 256), mode: str = "cartesian2d",
                           d: int = 2, length: float = 4.0, t0: float = 0.05, t1: float = 0.25,
                           C: float = 0.1, backend: str | None = None) -> ConvergenceTable:
    """L1 errors of runs from the exact profile at ``t0`` to ``t1`` and the
    least-squares order in ``log err`` vs ``log dx``."""
    errs, merrs, steps, viol = [], [], [], []
    dxs = []
    diff = PowerLaw(m)
    for n in resolutions:
        g = GridHandle.cartesian(n, length) if mode == "cartesian2d" else GridHandle.radial(n, length, d)
        dd = g.dimension
        u0 = GridField(_cell_average(lambda r: barenblatt(r, t0, m, dd, C), g, 6), g)
        cfg = SimConfig(diff, g, t_end=t1 - t0, dt_max=1.0, record_every=10 ** 9, tail_k=(1.0,),
                        tail_window=2, backend=backend)
        out = run(cfg, u0)
        exact = _cell_average(lambda r: barenblatt(r, t1, m, dd, C), g, 6)
        errs.append(float(np.sum(np.abs(out.final.values - exact) * g.volumes)))
        merrs.append(out.mass_drift)
        steps.append(out.steps)
        viol.append(out.energy_violations)
        dxs.append(g.dx)
    errs = np.array(errs)
    order = float(np.polyfit(np.log(dxs), np.log(errs), 1)[0]) if len(errs) > 1 else math.nan
    return ConvergenceTable(tuple(resolutions), errs, np.array(merrs), order, tuple(steps), tuple(viol))

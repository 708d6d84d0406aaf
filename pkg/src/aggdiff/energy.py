"""Free-energy ledger, HLS ratios and critical-mass predictions."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .convolution import ConvOperator, build_conv_operator
from .diffusion import (DiffusionSpec, EntropyDensity, classify_criticality, entropy_density,
                        entropy_growth_limit)
from .grid import GridField, GridHandle
from .kernel import KernelSpec, PowerLaw, critical_exponent, singularity_coefficient

VACUUM_FLOOR = 1e-14


@dataclass
class DiagnosticsRecord:
    """One snapshot of the free-energy ledger."""

    t: float
    mass: float
    linf: float
    lp: dict
    S: float
    W: float
    I: float
    D: float
    dt_used: float
    tails: dict = field(default_factory=dict)
    edge_mass: float = 0.0
    step: int = 0

    @property
    def F(self) -> float:
        return self.S - self.W


def _vals(u):
    return u.values if isinstance(u, GridField) else np.asarray(u, float)


def entropy(u: GridField, phi: EntropyDensity) -> float:
    """``S = sum_i Phi(u_i) vol_i`` (vacuum cells contribute 0)."""
    return float(np.sum(phi(u.values) * u.grid.volumes))


def interaction(u: GridField, conv: ConvOperator, psi=None) -> float:
    """``W = 1/2 sum_i u_i (K * u)_i vol_i``."""
    if psi is None:
        psi = conv.potential(u.values)
    return 0.5 * float(np.sum(u.values * psi * u.grid.volumes))


def free_energy(u: GridField, phi: EntropyDensity, conv: ConvOperator, psi=None) -> float:
    return entropy(u, phi) - interaction(u, conv, psi)


def second_moment(u: GridField) -> float:
    """``I = sum_i |x_i|^2 u_i vol_i`` about the domain centre."""
    return float(np.sum(u.grid.r2 * u.values * u.grid.volumes))


def _face_pairs(a, axis):
    if axis == 0:
        return a[:-1], a[1:]
    return a[:, :-1], a[:, 1:]


def entropy_production(u: GridField, A: DiffusionSpec, conv: ConvOperator | None, grid: GridHandle | None = None,
                       phi: EntropyDensity | None = None, psi=None, floor: float = VACUUM_FLOOR) -> float:
    """Discrete ``int (1/u) |grad A(u) - u grad K*u|^2``.

    Each interior face uses the density ``u_f = [A]/[Phi']`` (the ratio of
    the jumps across the face), which turns the integrand into
    ``u_f |[Phi']/dx - v_f|^2`` and makes ``D = -dS/dt`` exact for the
    semi-discrete pure-diffusion scheme.  Faces with ``u_f`` below
    ``floor * max(u)`` count as vacuum.
    """
    grid = grid or u.grid
    phi = phi or entropy_density(A, strict=False)
    vals = u.values
    umax = float(vals.max()) if vals.size else 0.0
    if umax <= 0:
        return 0.0
    Av = A.A(vals)
    with np.errstate(divide="ignore", invalid="ignore"):
        hv = np.asarray(phi.h(vals), float)
    h = grid.dx
    if conv is not None:
        vel = conv.face_velocity(psi=psi if psi is not None else conv.potential(vals))
    else:
        vel = None
    if grid.is_radial:
        pieces = [(vals, Av, hv, vel if vel is not None else 0.0, grid.face_areas * h, 0)]
    else:
        vx, vy = vel if vel is not None else (0.0, 0.0)
        fv = h * h
        pieces = [(vals, Av, hv, vx, fv, 0), (vals, Av, hv, vy, fv, 1)]
    total = 0.0
    for uu, aa, hh, v, fvol, ax in pieces:
        u0, u1 = _face_pairs(uu, ax)
        a0, a1 = _face_pairs(aa, ax)
        h0, h1 = _face_pairs(hh, ax)
        dA = a1 - a0
        with np.errstate(invalid="ignore", divide="ignore"):
            dh = h1 - h0
            # nearly equal neighbours: the jump ratio tends to the mean density
            close = np.abs(u1 - u0) <= 1e-9 * np.maximum(u0, u1)
            uf = np.where(close, 0.5 * (u0 + u1), dA / dh)
        uf = np.where(np.isfinite(uf), uf, 0.0)
        live = uf > floor * umax
        flux = np.where(live, dA / h - uf * v, 0.0)
        dens = np.where(live, uf, 1.0)
        total += float(np.sum(np.where(live, flux * flux / dens, 0.0) * fvol))
    return total


# -- HLS ----------------------------------------------------------------------------
_HLS_OPS: dict = {}


def _hls_operator(grid: GridHandle, alpha: float) -> ConvOperator:
    key = (grid, float(alpha))
    op = _HLS_OPS.get(key)
    if op is None:
        op = build_conv_operator(grid, PowerLaw(grid.dimension, 1.0, alpha, r_max=grid.diameter))
        _HLS_OPS[key] = op
    return op


def hls_ratio(u: GridField, alpha: float, mstar: float | None = None, conv: ConvOperator | None = None) -> float:
    """``int int u u |x-y|^{-alpha} / (||u||_1^{2-m*} ||u||_{m*}^{m*})``."""
    d = u.grid.dimension
    mstar = 1.0 + alpha / d if mstar is None else mstar
    if not mstar > 1.0:
        raise ValueError("HLS ratio needs m* > 1")
    vals = u.values
    if not np.any(vals > 0):
        raise ValueError("HLS ratio undefined for the zero field")
    conv = conv or _hls_operator(u.grid, alpha)
    vol = u.grid.volumes
    lhs = float(np.sum(vals * conv.potential(vals) * vol))
    M = float(np.sum(vals * vol))
    norm = float(np.sum(vals ** mstar * vol))
    return lhs / (M ** (2.0 - mstar) * norm)


def generalized_gaussian(grid: GridHandle, scale: float, shape: float) -> GridField:
    """Cell-sampled ``exp(-(r/scale)^shape)`` on a radial grid."""
    r = grid.centers
    return GridField(np.exp(-(r / scale) ** shape), grid)


@dataclass
class CmstarEstimate:
    value: float
    scale: float
    shape: float
    grid: GridHandle
    trace: list

    def profile(self) -> GridField:
        return generalized_gaussian(self.grid, self.scale, self.shape)


def estimate_Cmstar(alpha: float, d: int, n: int = 1024, radius: float = 1.0,
                    shapes=(1.0, 2.0, 4.0), sweeps: int = 40, tol: float = 1e-10) -> CmstarEstimate:
    """Lower bound for the HLS constant by coordinate ascent over
    generalized-Gaussian radial profiles ``exp(-(r/s)^beta)``.

    Alternates golden-section searches in ``beta`` and in ``s`` (the ratio
    is scale invariant, so ``s`` only trades resolution against truncation)
    from several starts and returns the best value found.

    Raises
    ------
    RuntimeError
        If no start improves on its initial value.
    """
    mstar = 1.0 + alpha / d
    if not (1.0 < mstar <= 2.0 - 2.0 / d + 1e-12):
        raise ValueError("need 1 < m* <= 2 - 2/d")
    grid = GridHandle.radial(n, radius, d)
    conv = _hls_operator(grid, alpha)

    def value(s, b):
        return hls_ratio(generalized_gaussian(grid, s, b), alpha, mstar, conv)

    def golden(f, lo, hi, iters=40):
        g = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = lo, hi
        c, e = b - g * (b - a), a + g * (b - a)
        fc, fe = f(c), f(e)
        for _ in range(iters):
            if fc > fe:
                b, e, fe = e, c, fc
                c = b - g * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, e, fe
                e = a + g * (b - a)
                fe = f(e)
        return (c, fc) if fc > fe else (e, fe)

    best = None
    trace = []
    improved = False
    for b0 in shapes:
        s, b = 0.25 * radius, float(b0)
        v = value(s, b)
        v0 = v
        for _ in range(sweeps):
            b, vb = golden(lambda x: value(s, x), 0.5, 12.0)
            s, vs = golden(lambda x: value(x, b), 0.05 * radius, 0.5 * radius)
            trace.append((float(b0), s, b, vs))
            if vs - v <= tol * abs(v):
                v = max(v, vs)
                break
            v = vs
        if v > v0:
            improved = True
        if best is None or v > best[0]:
            best = (v, s, b)
    if not improved:
        raise RuntimeError(f"HLS maximisation made no progress: {trace}")
    return CmstarEstimate(best[0], best[1], best[2], grid, trace)


def pinned_Cmstar(alpha: float, d: int) -> dict | None:
    """Pinned reference estimate from the packaged fixture, if present."""
    data = json.loads(resources.files("aggdiff").joinpath("data/cmstar.json").read_text())
    for row in data["estimates"]:
        if math.isclose(row["alpha"], alpha, rel_tol=1e-12) and row["d"] == d:
            return row
    return None


def Cmstar(alpha: float, d: int) -> float:
    row = pinned_Cmstar(alpha, d)
    if row is not None:
        return float(row["value"])
    return estimate_Cmstar(alpha, d).value


# -- critical mass ---------------------------------------------------------------
@dataclass
class CriticalMassPrediction:
    mstar: float
    regime: str  # "powerlaw" | "logarithmic" | "infinite"
    M_c: float
    c: float
    L: float
    C_mstar: float = math.nan
    criticality: str = ""
    notes: list = field(default_factory=list)


def critical_mass(kernel: KernelSpec, diff: DiffusionSpec, d: int | None = None, strict: bool = True) -> CriticalMassPrediction:
    """Predicted critical mass from the kernel's leading coefficient and the
    entropy growth limit.

    ``m* > 1``: ``M_c = (2L/(C_{m*} c))^{1/(2-m*)}``; ``m* = 1``:
    ``M_c = 2dL/c``; ``c = 0`` or ``L = inf`` gives ``M_c = inf``.  Since the
    HLS constant is a computed lower bound, the power-law ``M_c`` is an upper
    bound for the true value.
    """
    d = kernel.dimension if d is None else d
    mstar = critical_exponent(kernel)
    kind, c, alpha = singularity_coefficient(kernel)
    cls = classify_criticality(diff, mstar)
    notes = []
    if kind == "bounded" or c == 0.0:
        return CriticalMassPrediction(mstar, "infinite", math.inf, 0.0, math.nan, criticality=str(cls),
                                      notes=["bounded kernel: c = 0"])
    L = entropy_growth_limit(entropy_density(diff, strict=strict), mstar)
    if not math.isfinite(L):
        return CriticalMassPrediction(mstar, "infinite", math.inf, c, L, criticality=str(cls),
                                      notes=["subcritical diffusion: L = inf"])
    if L <= 0.0:
        notes.append("supercritical diffusion: no positive critical mass")
        return CriticalMassPrediction(mstar, "powerlaw" if mstar > 1 else "logarithmic", 0.0, c, L,
                                      criticality=str(cls), notes=notes)
    if mstar > 1.0:
        C = Cmstar(alpha, d)
        Mc = (2.0 * L / (C * c)) ** (1.0 / (2.0 - mstar))
        if cls.kind == "critical":
            Abar = cls.ell / mstar
            alt = (2.0 * Abar / ((mstar - 1.0) * C * c)) ** (1.0 / (2.0 - mstar))
            notes.append(f"power-tail form: M_c = {alt:.10g} (Abar = {Abar:.10g})")
        notes.append("C_m* is a lower bound, so M_c is an upper bound")
        return CriticalMassPrediction(mstar, "powerlaw", Mc, c, L, C, str(cls), notes)
    Mc = 2.0 * d * L / c
    return CriticalMassPrediction(mstar, "logarithmic", Mc, c, L, criticality=str(cls), notes=notes)

"""Diffusion nonlinearities ``A``: admissibility, entropy density, criticality.

The entropy density solves ``Phi'' = A'(z)/z`` with ``Phi'(1) = 0`` and
``Phi(0) = 0``.  With ``h(z) = int_1^z A'(s)/s ds`` an integration by parts
gives ``Phi(z) = int_0^z h = z h(z) - A(z)``, so the nested integral reduces
to two cumulative quadratures over the same adaptive panels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .quadrature import PanelIntegral, gl_integrate


class DiffusionError(ValueError):
    pass


class IndeterminateError(DiffusionError):
    """Tail behaviour could not be classified; carries the evidence."""

    def __init__(self, message: str, evidence=None):
        super().__init__(message)
        self.evidence = evidence


TAIL_GRID = np.geomspace(1e2, 1e8, 61)


class DiffusionSpec:
    """Base class: subclasses provide ``A(z)`` and ``dA(z)`` for ``z >= 0``."""

    family = "abstract"
    z_lo = 0.0
    z_hi = math.inf

    def A(self, z):
        raise NotImplementedError

    def dA(self, z):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def tail_exponent(self) -> float:
        """Largest exponent ``m`` with ``A'(z) z^{1-m}`` bounded below on the tail."""
        z = TAIL_GRID[-21:]
        slope = np.polyfit(np.log(z), np.log(self.dA(z)), 1)[0]
        return float(1.0 + slope)

    def __repr__(self):
        items = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({items})"

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash((type(self).__name__,) + tuple(
            (k, v) for k, v in sorted(self.params().items()) if np.isscalar(v)))


class PowerLaw(DiffusionSpec):
    """``A(z) = a z^m`` (``m = 1`` is linear diffusion)."""

    family = "powerlaw"

    def __init__(self, m: float, coefficient: float = 1.0):
        if not m > 0 or not coefficient > 0:
            raise DiffusionError("power-law exponent and coefficient must be positive")
        self.m = float(m)
        self.a = float(coefficient)

    def A(self, z):
        return self.a * np.power(np.asarray(z, float), self.m)

    def dA(self, z):
        z = np.asarray(z, float)
        if self.m == 1.0:
            return np.full(z.shape, self.a)
        return self.a * self.m * np.power(z, self.m - 1.0)

    def tail_exponent(self):
        return self.m

    def params(self):
        return {"exponent": self.m, "coefficient": self.a}


class SaturatedLinear(DiffusionSpec):
    """``A(z) = z^2/(1+z)``: quadratic at vacuum, linear at large density."""

    family = "saturated_linear"

    def A(self, z):
        z = np.asarray(z, float)
        return z * z / (1.0 + z)

    def dA(self, z):
        z = np.asarray(z, float)
        return z * (z + 2.0) / (1.0 + z) ** 2


class PowerPlusLinear(DiffusionSpec):
    """``A(z) = z^m + slope z``."""

    family = "power_plus_linear"

    def __init__(self, m: float, slope: float = 1.0):
        if not m > 0:
            raise DiffusionError("exponent must be positive")
        self.m = float(m)
        self.slope = float(slope)

    def A(self, z):
        z = np.asarray(z, float)
        return np.power(z, self.m) + self.slope * z

    def dA(self, z):
        z = np.asarray(z, float)
        return self.m * np.power(z, self.m - 1.0) + self.slope

    def params(self):
        return {"exponent": self.m, "slope": self.slope}


class Custom(DiffusionSpec):
    """Sampled ``A`` (and optionally ``A'``), monotone cubic interpolation.

    Positive samples are interpolated in log-log coordinates; below the
    first positive sample a power law through the first two samples is used.
    Requests above the table raise :class:`DiffusionError`.
    """

    family = "custom"

    def __init__(self, z, A, dA=None, source: str = ""):
        z = np.asarray(z, float)
        A = np.asarray(A, float)
        keep = z > 0
        z, A = z[keep], A[keep]
        if z.size < 4 or np.any(np.diff(z) <= 0) or np.any(A <= 0):
            raise DiffusionError("custom diffusion needs >= 4 increasing positive samples of A")
        self.z = z
        self.Avals = A
        self.source = source
        self.z_lo = float(z[0])
        self.z_hi = float(z[-1])
        self._A = PchipInterpolator(np.log(z), np.log(A), extrapolate=False)
        self.derivative_from_samples = dA is not None
        if dA is not None:
            dA = np.asarray(dA, float)[keep]
            if np.any(dA <= 0):
                raise DiffusionError("sampled A' must be positive")
            self.dAvals = dA
            self._dA = PchipInterpolator(np.log(z), np.log(dA), extrapolate=False)
        else:
            self.dAvals = None
            self._dA = None
        s0 = math.log(A[1] / A[0]) / math.log(z[1] / z[0])
        self._head = (A[0], s0)

    @classmethod
    def from_csv(cls, path, derivative_path=None):
        """Load ``(z, A)`` and optionally ``(z, A')`` from two-column CSV files."""
        from .tables import TableError, read_two_column

        try:
            z, A = read_two_column(path)
            dA = None
            if derivative_path is not None:
                z2, dA = read_two_column(derivative_path)
                if z2.shape != z.shape or not np.allclose(z2, z, rtol=1e-12, atol=0.0):
                    raise DiffusionError("derivative table must use the same z nodes as the A table")
        except TableError as exc:
            raise DiffusionError(str(exc)) from exc
        return cls(z, A, dA, source=str(path))

    def _range(self, z):
        if z.size and z.max() > self.z_hi * (1 + 1e-12):
            raise DiffusionError(f"density {z.max():g} beyond custom table (max {self.z_hi:g})")

    def A(self, z):
        z = np.asarray(z, float)
        self._range(z)
        out = np.zeros(z.shape)
        hi = z >= self.z_lo
        out[hi] = np.exp(self._A(np.log(np.minimum(z[hi], self.z_hi))))
        lo = (~hi) & (z > 0)
        a0, s0 = self._head
        out[lo] = a0 * (z[lo] / self.z_lo) ** s0
        return out

    def dA(self, z):
        z = np.asarray(z, float)
        self._range(z)
        out = np.zeros(z.shape)
        hi = z >= self.z_lo
        x = np.log(np.minimum(z[hi], self.z_hi))
        if self._dA is not None:
            out[hi] = np.exp(self._dA(x))
        else:
            out[hi] = np.exp(self._A(x)) * self._A(x, 1) / np.exp(x)
        lo = (~hi) & (z > 0)
        a0, s0 = self._head
        out[lo] = a0 * s0 / self.z_lo * (z[lo] / self.z_lo) ** (s0 - 1.0)
        return out

    def params(self):
        return {"source": self.source, "n": int(self.z.size)}

    def __eq__(self, other):
        return type(self) is type(other) and np.array_equal(self.z, other.z) \
            and np.array_equal(self.Avals, other.Avals)

    __hash__ = DiffusionSpec.__hash__


class Regularized(DiffusionSpec):
    """``a_eps' = A' + eps (1 + 1/(1+z))``, hence ``A_eps = A + eps z + eps ln(1+z)``."""

    family = "regularized"

    def __init__(self, base: DiffusionSpec, eps: float):
        if not eps > 0:
            raise DiffusionError("regularization needs eps > 0")
        self.base = base
        self.eps = float(eps)

    def A(self, z):
        z = np.asarray(z, float)
        return self.base.A(z) + self.eps * (z + np.log1p(z))

    def dA(self, z):
        z = np.asarray(z, float)
        return self.base.dA(z) + self.eps * (1.0 + 1.0 / (1.0 + z))

    def tail_exponent(self):
        return self.base.tail_exponent()

    def params(self):
        return {"base": repr(self.base), "eps": self.eps}


def regularize(spec: DiffusionSpec, eps: float) -> Regularized:
    """Uniformly parabolic regularization with ``A' + eps <= a_eps' <= A' + 2 eps``."""
    return Regularized(spec, eps)


# -- admissibility ---------------------------------------------------------------
@dataclass
class DiffusionReport:
    d1: bool
    d2: bool
    d3: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def overall(self):
        return bool(self.d1 and self.d2 and self.d3)

    def rows(self):
        return [("D1", self.d1, self.diagnostics.get("D1", "")),
                ("D2", self.d2, self.diagnostics.get("D2", "")),
                ("D3", self.d3, self.diagnostics.get("D3", "")),
                ("overall", self.overall, "")]


def _d3_series(spec: DiffusionSpec, shells: int = 60):
    """Dyadic shell integrals of ``A'(z)/z`` towards 0 and the shell ratio."""
    top = 1.0
    edges = top * 2.0 ** -np.arange(shells + 1.0)
    f = lambda z: spec.dA(z) / z  # noqa: E731
    vals = gl_integrate(f, edges[1:], edges[:-1], 16)
    return edges, vals


def check_admissible_diffusion(spec: DiffusionSpec, z_max: float = 1e8, samples: int = 400) -> DiffusionReport:
    """Sample (D1) positivity of ``A'``, (D2) non-degeneracy at large density
    and (D3) integrability of ``A'(z)/z`` at 0 (dyadic ratio test)."""
    diag = {}
    z_top = min(z_max, spec.z_hi)
    z = np.geomspace(1e-12, z_top, samples)
    dA = spec.dA(z)
    A0 = float(np.asarray(spec.A(np.array([0.0])))[0])
    d1 = bool(np.all(np.isfinite(dA)) and np.all(dA > 0) and A0 == 0.0)
    diag["D1"] = f"min A'={dA.min():.3e}, A(0)={A0:g}"
    tail = z[z >= z_top / 100.0]
    slope = float(np.polyfit(np.log(tail), np.log(spec.dA(tail)), 1)[0]) if tail.size > 3 else -1.0
    d2 = bool(np.all(spec.dA(tail) > 0) and slope > -1e-3)
    diag["D2"] = f"tail slope of ln A'={slope:.4f}"
    edges, vals = _d3_series(spec)
    if not np.all(np.isfinite(vals)):
        diag["D3"] = "indeterminate: non-finite shell integrals"
        return DiffusionReport(d1, d2, False, diag)
    nz = vals[vals > 0]
    ratios = nz[1:] / nz[:-1]
    rho = float(np.max(ratios[-8:]))
    # A'/z ~ z^b gives shell ratio 2^{-(b+1)}: integrable iff the ratio settles below 1
    if rho <= 1.0 - 1e-3:
        d3 = True
        diag["D3"] = f"shell ratio={rho:.6f}"
    elif abs(rho - 1.0) <= 1e-6 and np.ptp(ratios[-8:]) <= 1e-6:
        d3 = False
        diag["D3"] = f"diverges: shell ratio={rho:.6f}"
    else:
        d3 = False
        diag["D3"] = f"indeterminate: shell ratio {rho:.9f} too close to 1"
    return DiffusionReport(d1, d2, d3, diag)


# -- entropy density -------------------------------------------------------------
class EntropyDensity:
    """Evaluator for ``Phi`` and ``h = Phi'`` built from cached quadrature tables.

    Parameters
    ----------
    spec : DiffusionSpec
    strict : bool
        Refuse specs failing (D3).  ``strict=False`` allows e.g. linear
        diffusion, where ``h`` diverges logarithmically at 0 but ``Phi`` is
        still finite.
    """

    def __init__(self, spec: DiffusionSpec, strict: bool = True, lo: float = 1e-150, hi: float = 1e150):
        if strict:
            rep = check_admissible_diffusion(spec)
            if not rep.d3:
                raise DiffusionError(f"entropy density refused: (D3) fails ({rep.diagnostics['D3']})")
        self.spec = spec
        lo = max(lo, spec.z_lo) if spec.z_lo > 0 else lo
        hi = min(hi, spec.z_hi)
        g = lambda s: spec.dA(s) / s  # noqa: E731
        self._h = PanelIntegral(g, 1.0, lo, hi)
        self._a = PanelIntegral(spec.dA, lo, lo, hi)
        self.lo = self._h.lo
        self.hi = min(self._h.hi, self._a.hi)
        l2 = self.lo * 2.0
        g0, g1 = g(np.array([self.lo, l2]))
        self._beta = math.log(g1 / g0) / math.log(2.0)
        self._g0 = float(g0)
        self._h0 = float(self._h(np.array(self.lo)))
        self.converged = self._h.converged and self._a.converged

    def _tail_int(self, z):
        """``int_z^lo g`` for ``z < lo`` under the power model ``g ~ z^beta``."""
        b1 = self._beta + 1.0
        t = z / self.lo
        if abs(b1) < 1e-12:
            return -self._g0 * self.lo * np.log(t)
        return self._g0 * self.lo * (1.0 - t ** b1) / b1

    def h(self, z):
        """``Phi'(z) = int_1^z A'(s)/s ds``."""
        z = np.asarray(z, float)
        out = np.empty(z.shape)
        big = z >= self.lo
        out[big] = self._h(z[big])
        small = ~big
        with np.errstate(divide="ignore"):
            out[small] = self._h0 - self._tail_int(z[small])
        return out

    def A_int(self, z):
        """``int_0^z A'`` on the same panels (consistent with ``h``)."""
        z = np.asarray(z, float)
        out = np.empty(z.shape)
        big = z >= self.lo
        b2 = self._beta + 2.0
        head = self._g0 * self.lo * self.lo / b2
        out[big] = head + self._a(z[big])
        out[~big] = head * (z[~big] / self.lo) ** b2
        return out

    def __call__(self, z):
        """``Phi(z) = z h(z) - int_0^z A'``; ``Phi(0) = 0``."""
        z = np.asarray(z, float)
        out = np.zeros(z.shape)
        pos = z > 0
        zp = z[pos]
        out[pos] = zp * self.h(zp) - self.A_int(zp)
        return out

    def phi2(self, z):
        z = np.asarray(z, float)
        return self.spec.dA(z) / z

    def lower_bound_constant(self) -> float:
        """``C`` with ``int Phi(u) >= -C M``.

        ``h`` is increasing with ``h <= 0`` on (0, 1], so ``Phi(u) >= -|h(0)| u``
        for ``u <= 1`` and ``Phi(u) >= Phi(1) >= -|h(0)|`` above; with the
        Chebyshev bound ``|{u >= 1}| <= M`` this gives ``C = 2 |h(0)|``.
        """
        return 2.0 * max(-float(self.h(np.array(0.0))), 0.0)


_ENTROPY_CACHE: dict = {}


def entropy_density(spec: DiffusionSpec, strict: bool = True) -> EntropyDensity:
    """Cached :class:`EntropyDensity` for ``spec``."""
    key = (id(spec), strict)
    hit = _ENTROPY_CACHE.get(key)
    if hit is not None and hit[0] is spec:
        return hit[1]
    ent = EntropyDensity(spec, strict=strict)
    _ENTROPY_CACHE[key] = (spec, ent)
    return ent


# -- criticality --------------------------------------------------------------------
@dataclass(frozen=True)
class CriticalityClass:
    kind: str  # "subcritical" | "critical" | "supercritical"
    ell: float = math.nan
    evidence: tuple = ()

    def __str__(self):
        return f"critical(ell={self.ell:.10g})" if self.kind == "critical" else self.kind


def classify_criticality(spec: DiffusionSpec, mstar: float, flat_tol: float = 1e-3) -> CriticalityClass:
    """Classify by the tail of ``A'(z)/z^{m*-1}`` on ``z in [1e2, 1e8]``.

    Per-decade log increments decide: the last one below ``flat_tol`` means
    convergence (``ell`` = minimum over the final third of the grid), a
    consistent sign otherwise means divergence or decay.

    Raises
    ------
    IndeterminateError
        When the increments change sign on the tail.
    """
    z = TAIL_GRID
    if spec.z_hi < z[-1]:
        raise IndeterminateError(f"diffusion table ends at {spec.z_hi:g}, below the tail grid")
    q = spec.dA(z) / z ** (mstar - 1.0)
    if not np.all(np.isfinite(q)) or np.any(q <= 0):
        raise IndeterminateError("non-positive or non-finite tail ratio", tuple(q))
    lq = np.log10(q)
    inc = lq[10:] - lq[:-10]  # per-decade increments
    evidence = tuple(float(x) for x in q[::10])
    last = inc[-10:]
    if abs(inc[-1]) <= flat_tol and np.all(np.abs(last) <= 10 * flat_tol):
        return CriticalityClass("critical", float(q[-len(q) // 3:].min()), evidence)
    if np.all(last > 0):
        return CriticalityClass("subcritical", math.inf, evidence)
    if np.all(last < 0):
        return CriticalityClass("supercritical", 0.0, evidence)
    raise IndeterminateError("oscillatory tail ratio with no trend", evidence)


def entropy_growth_limit(phi: EntropyDensity, mstar: float, confirm_rtol: float = 1e-3) -> float:
    """``lim Phi(z)/z^{m*}`` (``m* > 1``) or ``lim Phi(z)/(z ln z)`` (``m* = 1``).

    Divergent and decaying tails follow the criticality class.  On critical
    tails two applications of l'Hopital turn the limit into
    ``ell/(m*(m*-1))`` (resp. ``ell``) with ``ell = lim A'(z)/z^{m*-1}``;
    that value is confirmed against an extrapolation of the ratio itself
    (Aitken for ``m* > 1``, a fit in ``1/ln z`` for ``m* = 1``).

    Raises
    ------
    IndeterminateError
        For non-monotone tail ratios or a failed confirmation.
    """
    if mstar < 1.0:
        raise DiffusionError("critical exponent must be >= 1")
    z = np.geomspace(1e2, 1e8, 25)
    R = phi(z) / (z ** mstar if mstar > 1.0 else z * np.log(z))
    dR = np.diff(R[8:])  # z >= 1e4
    if not (np.all(dR >= 0) or np.all(dR <= 0)):
        raise IndeterminateError("non-monotone entropy growth ratios", tuple(R))
    cls = classify_criticality(phi.spec, mstar)
    if cls.kind == "subcritical":
        if not R[-1] > R[0]:
            raise IndeterminateError("subcritical tail but entropy ratio not growing", tuple(R))
        return math.inf
    if cls.kind == "supercritical":
        return 0.0
    if mstar > 1.0:
        L = cls.ell / (mstar * (mstar - 1.0))
        r = R[-6:]
        d2 = r[2:] - 2.0 * r[1:-1] + r[:-2]
        with np.errstate(divide="ignore", invalid="ignore"):
            acc = np.where(np.abs(d2) > 1e-14 * np.abs(r[2:]), r[2:] - (r[2:] - r[1:-1]) ** 2 / d2, r[2:])
        extrap = float(acc[-1])
    else:
        L = cls.ell
        lz = np.log(z[-10:])
        X = np.vstack([np.ones_like(lz), 1.0 / lz, 1.0 / lz ** 2]).T
        extrap = float(np.linalg.lstsq(X, R[-10:], rcond=None)[0][0])
    if not math.isclose(L, extrap, rel_tol=confirm_rtol):
        raise IndeterminateError(
            f"entropy growth extrapolation {extrap:.8g} does not confirm tail limit {L:.8g}", tuple(R))
    return float(L)

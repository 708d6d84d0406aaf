"""Radial interaction kernels: evaluation, admissibility and singularity class.

A kernel is ``K(x) = k(|x|)`` with ``k`` radial, non-increasing and (for the
singular families) blowing up at the origin no faster than the Newtonian
potential.  Every family exposes the profile derivatives up to order three,
the radial moment ``int_0^R k(r) r dr`` and, when known, the closed-form angular
(shell) average used by the radial convolution operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate, special
from scipy.interpolate import PchipInterpolator

from .quadrature import PanelIntegral, gl_integrate


class KernelError(ValueError):
    """Invalid kernel request (domain, range or parameter error)."""


class KernelClassificationError(KernelError):
    """Evaluation or fitting failure while classifying a kernel."""

    def __init__(self, condition: str, message: str):
        super().__init__(f"[{condition}] {message}")
        self.condition = condition


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


class KernelValues(NamedTuple):
    k: np.ndarray
    dk: np.ndarray
    d2k: np.ndarray


@dataclass(frozen=True)
class Singularity:
    """Analytic singularity metadata carried by built-in families."""

    kind: str  # "power" | "logarithmic" | "bounded"
    c: float = 0.0
    alpha: float = 0.0


class KernelSpec:
    """Base class of the radial kernel families.

    Subclasses implement :meth:`_profile` returning ``k^{(nu)}(r)`` for
    ``nu = 0..3``.  ``r_max`` bounds the probe range (domain diameter).
    """

    family = "abstract"

    def __init__(self, dimension: int, r_max: float = 4.0):
        if int(dimension) != dimension or dimension < 2:
            raise KernelError("dimension must be an integer >= 2")
        if not r_max > 0:
            raise KernelError("r_max must be positive")
        self.dimension = int(dimension)
        self.r_max = float(r_max)
        self._moment_table = None

    # -- profile -------------------------------------------------------
    def _profile(self, r: np.ndarray, nu: int) -> np.ndarray:
        raise NotImplementedError

    def profile(self, r, nu: int = 0) -> np.ndarray:
        """``k^{(nu)}(r)`` for ``r > 0`` (no range checks beyond ``r > 0``)."""
        r = np.asarray(r, dtype=float)
        return self._profile(r, nu)

    @property
    def singularity(self) -> Singularity | None:
        """Exact singularity metadata, ``None`` when only a fit is available."""
        return None

    # -- integrals -----------------------------------------------------
    def radial_moment(self, R):
        """``int_0^R k(r) r dr``; numeric fallback on geometric panels."""
        if self._moment_table is None:
            self._moment_table = _numeric_moment(self)
        return self._moment_table(R)

    def shell_average(self, r, s):
        """Average of ``k(|r e - s w|)`` over unit vectors ``w``, or ``None``."""
        return None

    def params(self) -> dict:
        return {}

    def __repr__(self):
        items = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}(d={self.dimension}, {items})"

    def __eq__(self, other):
        return type(self) is type(other) and self.dimension == other.dimension \
            and self.params() == other.params()

    def __hash__(self):
        return hash((type(self).__name__, self.dimension, tuple(sorted(
            (k, v) for k, v in self.params().items() if np.isscalar(v)))))


def _numeric_moment(spec: KernelSpec):
    """Cumulative ``int_0^R k r dr`` with a power-law model below the table."""
    lo = getattr(spec, "r_lo", 1e-12 * spec.r_max)
    hi = getattr(spec, "r_hi", 4.0 * spec.r_max)
    table = PanelIntegral(lambda x: spec.profile(x) * x, lo, lo, hi, rtol=1e-13)
    k0, k1 = spec.profile(np.array([lo, 2.0 * lo]))
    beta = 0.0
    if k0 > 0 and k1 > 0:
        beta = math.log(k0 / k1) / math.log(2.0)
    head = k0 * lo * lo / (2.0 - beta)

    def moment(R):
        R = np.asarray(R, dtype=float)
        out = np.empty_like(R)
        small = R < lo
        out[~small] = head + table(R[~small])
        rs = R[small]
        out[small] = head * (rs / lo) ** (2.0 - beta)
        return out

    return moment


class Newtonian(KernelSpec):
    """Attractive Newtonian potential: ``-ln r/(2 pi)`` in 2D, ``r^{2-d}/((d-2)|S^{d-1}|)`` otherwise."""

    family = "newtonian"

    def __init__(self, dimension: int, r_max: float = 4.0):
        super().__init__(dimension, r_max)
        d = self.dimension
        self.coef = 1.0 / (2.0 * math.pi) if d == 2 else 1.0 / ((d - 2) * sphere_area(d))

    def _profile(self, r, nu):
        d, c = self.dimension, self.coef
        if d == 2:
            return _log_profile(r, c, nu)
        return _power_profile(r, c, d - 2.0, nu)

    @property
    def singularity(self):
        if self.dimension == 2:
            return Singularity("logarithmic", self.coef)
        return Singularity("power", self.coef, float(self.dimension - 2))

    def radial_moment(self, R):
        if self.dimension == 2:
            return _log_moment(np.asarray(R, float), self.coef)
        return _power_moment(np.asarray(R, float), self.coef, self.dimension - 2.0)

    def shell_average(self, r, s):
        # shell theorem
        return self.profile(np.maximum(r, s))


class Logarithmic(KernelSpec):
    """``k(r) = -c ln r`` (bounded domains only)."""

    family = "logarithmic"

    def __init__(self, dimension: int = 2, strength: float = 1.0 / (2 * math.pi), r_max: float = 4.0):
        super().__init__(dimension, r_max)
        if not strength > 0:
            raise KernelError("logarithmic strength must be positive")
        self.c = float(strength)

    def _profile(self, r, nu):
        return _log_profile(r, self.c, nu)

    @property
    def singularity(self):
        return Singularity("logarithmic", self.c)

    def radial_moment(self, R):
        return _log_moment(np.asarray(R, float), self.c)

    def shell_average(self, r, s):
        if self.dimension == 2:
            return self.profile(np.maximum(r, s))
        return None

    def params(self):
        return {"strength": self.c}


class PowerLaw(KernelSpec):
    """``k(r) = c r^{-alpha}``; admissible for ``0 < alpha <= d - 2``."""

    family = "powerlaw"

    def __init__(self, dimension: int, strength: float = 1.0, exponent: float = 1.0, r_max: float = 4.0):
        super().__init__(dimension, r_max)
        if not strength > 0 or not exponent > 0:
            raise KernelError("power-law strength and exponent must be positive")
        self.c = float(strength)
        self.alpha = float(exponent)

    def _profile(self, r, nu):
        return _power_profile(r, self.c, self.alpha, nu)

    @property
    def singularity(self):
        return Singularity("power", self.c, self.alpha)

    def radial_moment(self, R):
        if self.alpha >= 2.0:
            raise KernelError("radial moment diverges for alpha >= 2")
        return _power_moment(np.asarray(R, float), self.c, self.alpha)

    def shell_average(self, r, s):
        r = np.asarray(r, float)
        s = np.asarray(s, float)
        big = np.maximum(r, s)
        rho = (np.minimum(r, s) / big) ** 2
        a = 0.5 * self.alpha
        d = self.dimension
        return self.c * big ** (-self.alpha) * special.hyp2f1(a, a - 0.5 * d + 1.0, 0.5 * d, rho)

    def params(self):
        return {"strength": self.c, "exponent": self.alpha}


class Gaussian(KernelSpec):
    """``k(r) = c exp(-r^2/(2 sigma^2))``, bounded at the origin."""

    family = "gaussian"

    def __init__(self, dimension: int, width: float = 1.0, strength: float = 1.0, r_max: float = 4.0):
        super().__init__(dimension, r_max)
        if not width > 0 or not strength > 0:
            raise KernelError("gaussian width and strength must be positive")
        self.sigma = float(width)
        self.c = float(strength)

    def _profile(self, r, nu):
        s2 = self.sigma ** 2
        g = self.c * np.exp(-0.5 * r * r / s2)
        if nu == 0:
            return g
        if nu == 1:
            return -r / s2 * g
        if nu == 2:
            return (r * r / s2 - 1.0) / s2 * g
        if nu == 3:
            return (3.0 * r / s2 ** 2 - r ** 3 / s2 ** 3) * g
        raise ValueError(nu)

    @property
    def singularity(self):
        return Singularity("bounded", 0.0)

    def radial_moment(self, R):
        s2 = self.sigma ** 2
        return self.c * s2 * -np.expm1(-0.5 * np.asarray(R, float) ** 2 / s2)

    def shell_average(self, r, s):
        r = np.asarray(r, float)
        s = np.asarray(s, float)
        s2 = self.sigma ** 2
        nu = 0.5 * self.dimension - 1.0
        z = r * s / s2
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = math.gamma(nu + 1.0) * np.power(0.5 * z, -nu) * special.ive(nu, z)
        ratio = np.where(z < 1e-8, 1.0, ratio)
        return self.c * np.exp(-0.5 * (r - s) ** 2 / s2) * ratio

    def params(self):
        return {"width": self.sigma, "strength": self.c}


class Constant(KernelSpec):
    """``k(r) = value`` (``value = 0`` gives the interaction-free problem)."""

    family = "constant"

    def __init__(self, dimension: int, value: float = 1.0, r_max: float = 4.0):
        super().__init__(dimension, r_max)
        self.value = float(value)

    def _profile(self, r, nu):
        return np.full(np.shape(r), self.value if nu == 0 else 0.0)

    @property
    def singularity(self):
        return Singularity("bounded", 0.0)

    def radial_moment(self, R):
        return 0.5 * self.value * np.asarray(R, float) ** 2

    def shell_average(self, r, s):
        return np.full(np.broadcast(r, s).shape, self.value)

    def params(self):
        return {"value": self.value}


class TabulatedRadial(KernelSpec):
    """Kernel given by samples ``(r_i, k_i)``, interpolated monotonically.

    Values come from a PCHIP interpolant in ``(ln r, k)``; requests outside
    ``[r_1, r_n]`` raise :class:`KernelError`.  Admissibility probes use
    divided differences of the samples themselves.
    """

    family = "tabulated"

    def __init__(self, dimension: int, r, k, r_max: float | None = None, source: str = ""):
        r = np.asarray(r, dtype=float)
        k = np.asarray(k, dtype=float)
        if r.ndim != 1 or r.shape != k.shape or r.size < 4:
            raise KernelError("tabulated kernel needs matching 1-D samples (at least 4)")
        if np.any(r <= 0) or np.any(np.diff(r) <= 0):
            raise KernelError("tabulated radii must be positive and strictly increasing")
        if not np.all(np.isfinite(k)):
            raise KernelError("tabulated kernel values must be finite")
        super().__init__(dimension, float(r[-1]) if r_max is None else r_max)
        self.r = r
        self.k = k
        self.source = source
        self.r_lo = float(r[0])
        self.r_hi = float(r[-1])
        x = np.log(r)
        # positive profiles interpolate ln k (exact for power laws)
        self._logk = bool(np.all(k > 0))
        y = np.log(k) if self._logk else k
        self._interp = PchipInterpolator(x, y, extrapolate=False)
        self._derivs = [self._interp.derivative(j) for j in (1, 2, 3)]

    def _check_range(self, r):
        if r.size and (r.min() < self.r_lo * (1 - 1e-12) or r.max() > self.r_hi * (1 + 1e-12)):
            raise KernelError(
                f"radius outside tabulated range [{self.r_lo:g}, {self.r_hi:g}]")

    def _profile(self, r, nu):
        self._check_range(r)
        x = np.log(np.clip(r, self.r_lo, self.r_hi))
        y = self._interp(x)
        if nu == 0:
            return np.exp(y) if self._logk else y
        y1, y2, y3 = (self._derivs[j](x) if j < nu else 0.0 for j in range(3))
        if self._logk:
            k = np.exp(y)
            kx = [k * y1, k * (y2 + y1 * y1), k * (y3 + 3.0 * y1 * y2 + y1 ** 3)]
        else:
            kx = [y1, y2, y3]
        if nu == 1:
            return kx[0] / r
        if nu == 2:
            return (kx[1] - kx[0]) / r ** 2
        return (kx[2] - 3.0 * kx[1] + 2.0 * kx[0]) / r ** 3

    @classmethod
    def from_csv(cls, path, dimension: int, r_max: float | None = None):
        """Load ``(r, k)`` samples from a two-column CSV file."""
        from .tables import TableError, read_two_column

        try:
            r, k = read_two_column(path)
        except TableError as exc:
            raise KernelError(str(exc)) from exc
        return cls(dimension, r, k, r_max=r_max, source=str(path))

    def sample_derivatives(self):
        """Divided-difference estimates of ``k', k'', k'''`` on the sample nodes."""
        x = np.log(self.r)
        k1 = np.gradient(self.k, x, edge_order=2)
        k2 = np.gradient(k1, x, edge_order=2)
        k3 = np.gradient(k2, x, edge_order=2)
        r = self.r
        return k1 / r, (k2 - k1) / r ** 2, (k3 - 3.0 * k2 + 2.0 * k1) / r ** 3

    def _extended(self, r):
        """Profile with a power-law head below the table (quadrature use only)."""
        r = np.asarray(r, float)
        out = np.empty_like(r)
        lo = r < self.r_lo
        out[~lo] = self._profile(np.minimum(r[~lo], self.r_hi), 0)
        if np.any(lo):
            k0, k1 = self.k[0], self.k[1]
            if k0 > 0 and k1 > 0:
                beta = math.log(k0 / k1) / math.log(self.r[1] / self.r[0])
                out[lo] = k0 * (r[lo] / self.r_lo) ** (-beta)
            else:
                out[lo] = k0
        return out

    def params(self):
        return {"source": self.source, "n": int(self.r.size)}

    def __eq__(self, other):
        return type(self) is type(other) and self.dimension == other.dimension \
            and np.array_equal(self.r, other.r) and np.array_equal(self.k, other.k)

    __hash__ = KernelSpec.__hash__


class VirialProfile(KernelSpec):
    """The radial profile ``q(r) = r k'(r)`` of ``x . grad K``."""

    family = "virial"

    def __init__(self, base: KernelSpec):
        super().__init__(base.dimension, base.r_max)
        self.base = base
        if hasattr(base, "r_lo"):
            self.r_lo = base.r_lo
            self.r_hi = base.r_hi

    def _profile(self, r, nu):
        if nu != 0:
            raise NotImplementedError("virial profile derivatives are not needed")
        return r * self.base.profile(r, 1)

    def radial_moment(self, R):
        # int_0^R r^2 k' dr = R^2 k(R) - 2 int_0^R k r dr
        R = np.asarray(R, float)
        return R * R * self.base.profile(R) - 2.0 * self.base.radial_moment(R)

    def shell_average(self, r, s):
        b = self.base
        if isinstance(b, Constant):
            return np.zeros(np.broadcast(r, s).shape)
        if isinstance(b, (Newtonian, Logarithmic)) and b.dimension == 2:
            c = b.coef if isinstance(b, Newtonian) else b.c
            return np.full(np.broadcast(r, s).shape, -c)
        return None


# -- closed-form helpers ---------------------------------------------------
def _power_profile(r, c, a, nu):
    coef = c
    for j in range(nu):
        coef = coef * -(a + j)
    return coef * r ** (-a - nu)


def _log_profile(r, c, nu):
    if nu == 0:
        return -c * np.log(r)
    return -c * (-1.0) ** (nu - 1) * math.factorial(nu - 1) * r ** (-float(nu))


def _power_moment(R, c, a):
    return c * R ** (2.0 - a) / (2.0 - a)


def _log_moment(R, c):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -c * (0.5 * R * R * np.log(R) - 0.25 * R * R)
    return np.where(R > 0, out, 0.0)


# -- public operations ---------------------------------------------------------
def eval_kernel(spec: KernelSpec, r) -> KernelValues:
    """Radial profile and its first two derivatives at ``r > 0``.

    Raises
    ------
    KernelError
        For ``r <= 0`` or, for tabulated kernels, ``r`` beyond the table.
    """
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise KernelError("kernel evaluated at r <= 0")
    return KernelValues(spec.profile(r, 0), spec.profile(r, 1), spec.profile(r, 2))


def third_derivative_norm(k1, k2, k3, r, d):
    """Frobenius norm of ``D^3 K`` at ``|x| = r`` from the radial derivatives."""
    phi = (k2 - k1 / r) / r ** 2
    dphi = k3 / r ** 2 - 3.0 * (k2 * r - k1) / r ** 4
    return np.sqrt((3.0 * phi * r + dphi * r * r) ** 2 + 3.0 * (d - 1) * (phi * r) ** 2)


@dataclass(frozen=True)
class ProbePlan:
    """Sampling plan for :func:`check_admissible`.

    ``delta`` defaults to a tenth of ``r_max``; ``decades`` sets how far the
    probes reach towards the origin.
    """

    delta: float | None = None
    decades: float = 8.0
    samples: int = 400
    shells: int = 48
    bd_growth: float = 10.0
    mono_rtol: float = 1e-6


@dataclass
class AdmissibilityReport:
    l1loc: bool
    radial_nonincreasing: bool
    monotone_derivatives: bool
    third_derivative_bound: bool
    bd_sup: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def overall(self) -> bool:
        return bool(self.l1loc and self.radial_nonincreasing
                    and self.monotone_derivatives and self.third_derivative_bound)

    def rows(self):
        return [
            ("l1loc", self.l1loc, self.diagnostics.get("l1loc", "")),
            ("radial_nonincreasing", self.radial_nonincreasing, self.diagnostics.get("KN", "")),
            ("monotone_derivatives", self.monotone_derivatives, self.diagnostics.get("MN", "")),
            ("third_derivative_bound", self.third_derivative_bound, f"sup={self.bd_sup:.6e}"),
            ("overall", self.overall, ""),
        ]


def _monotone(seq, rtol):
    d = np.diff(seq)
    scale = rtol * (np.abs(seq[1:]) + np.abs(seq[:-1])) + 1e-300
    return bool(np.all(d >= -scale) or np.all(d <= scale))


def _finite(condition, values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise KernelClassificationError(condition, "non-finite kernel evaluation on probe points")


def check_admissible(spec: KernelSpec, probe: ProbePlan | None = None) -> AdmissibilityReport:
    """Probe the kernel admissibility conditions by sampling.

    ``l1loc`` sums ``int |k| r^{d-1}`` over dyadic shells towards 0 and
    requires the shell ratio to settle below one.  KN checks monotone
    samples, MN checks monotonicity of ``k''`` and ``k'/r`` on ``(0, delta)``
    and BD requires ``|D^3 K| r^{d+1}`` not to grow towards the origin.
    """
    probe = probe or ProbePlan()
    d = spec.dimension
    tab = isinstance(spec, TabulatedRadial)
    delta = probe.delta if probe.delta is not None else 0.1 * spec.r_max
    lo = max(delta * 10.0 ** (-probe.decades), spec.r_lo if tab else 0.0)
    if tab:
        delta = min(delta, spec.r_hi)
    diag = {}

    # (R): local integrability
    try:
        edges = delta * 2.0 ** -np.arange(probe.shells + 1)
        if tab:
            edges = edges[edges >= spec.r_lo]
        f = lambda x: np.abs(spec.profile(x)) * x ** (d - 1)  # noqa: E731
        shells = gl_integrate(f, edges[1:], edges[:-1], 16)
    except KernelError as exc:
        raise KernelClassificationError("l1loc", str(exc)) from exc
    _finite("l1loc", [shells])
    nz = shells[shells > 0]
    if nz.size < 4:
        l1 = True
        diag["l1loc"] = "vanishing near origin"
    else:
        ratios = nz[1:] / nz[:-1]
        rho = float(np.max(ratios[-min(8, ratios.size):]))
        l1 = rho < 1.0 - 1e-9
        diag["l1loc"] = f"shell ratio={rho:.6f}"

    # (KN): non-increasing profile
    if tab:
        kv = spec.k
        dk = np.diff(kv)
        kn = bool(np.all(dk <= 1e-12 * np.abs(kv).max()))
    else:
        rr = np.geomspace(lo, spec.r_max, probe.samples)
        try:
            kv = spec.profile(rr)
            k1 = spec.profile(rr, 1)
        except KernelError as exc:
            raise KernelClassificationError("KN", str(exc)) from exc
        _finite("KN", [kv, k1])
        kn = bool(np.all(np.diff(kv) <= 1e-13 * np.abs(kv).max()) and np.all(k1 <= 0))
    diag["KN"] = "non-increasing" if kn else "increasing somewhere"

    # (MN) and (BD) on (0, delta)
    if tab:
        # drop the one-sided difference stencils at the table ends
        sel = spec.r <= delta
        sel[:3] = False
        sel[-3:] = False
        rr = spec.r[sel]
        k1, k2, k3 = (x[sel] for x in spec.sample_derivatives())
    else:
        rr = np.geomspace(lo, delta, probe.samples)
        try:
            k1, k2, k3 = (spec.profile(rr, j) for j in (1, 2, 3))
        except KernelError as exc:
            raise KernelClassificationError("MN", str(exc)) from exc
    _finite("MN", [k1, k2, k3])
    # "monotone on (0, delta') for some delta'": shrink delta a few decades
    mn = False
    for j in range(4):
        sel = rr <= delta * 10.0 ** -j
        if sel.sum() < 8:
            break
        if _monotone(k2[sel], probe.mono_rtol) and _monotone(k1[sel] / rr[sel], probe.mono_rtol):
            mn = True
            diag["MN"] = f"monotone on (0, {delta * 10.0 ** -j:.3g})"
            break
    if not mn:
        diag["MN"] = "non-monotone"
    g = third_derivative_norm(k1, k2, k3, rr, d) * rr ** (d + 1)
    _finite("BD", [g])
    half = max(rr.size // 2, 1)
    outer = float(np.max(g[half:])) if g[half:].size else float(np.max(g))
    inner = float(np.max(g[:half]))
    bd = inner <= probe.bd_growth * max(outer, 1e-300) or inner < 1e-300
    return AdmissibilityReport(l1, kn, mn, bool(bd), float(np.max(g)), diag)


@dataclass(frozen=True)
class SingularityClass:
    kind: str
    c: float
    alpha: float
    residual: float
    window: tuple

    def __str__(self):
        if self.kind == "power":
            return f"power(c={self.c:.6g}, alpha={self.alpha:.6g})"
        if self.kind == "logarithmic":
            return f"logarithmic(c={self.c:.6g})"
        return "bounded"


def _fit_models(r, k):
    """Relative RMS residuals and parameters of the three near-origin models."""
    out = {}
    x = np.log(r)
    scale = np.sqrt(np.mean(k * k)) + 1e-300
    # power and log models carry a regular O(r) correction term
    if np.all(k > 0):
        A = np.vstack([np.ones_like(x), x, r]).T
        coef, *_ = np.linalg.lstsq(A, np.log(k), rcond=None)
        res = np.log(k) - A @ coef
        out["power"] = (float(np.sqrt(np.mean(res ** 2))), math.exp(coef[0]), -float(coef[1]))
    A = np.vstack([np.ones_like(x), x, r]).T
    coef, *_ = np.linalg.lstsq(A, k, rcond=None)
    res = k - A @ coef
    if coef[1] < 0:
        out["logarithmic"] = (float(np.sqrt(np.mean(res ** 2)) / scale), -float(coef[1]), 0.0)
    A = np.vstack([np.ones_like(r), r ** 2, r ** 4]).T
    coef, *_ = np.linalg.lstsq(A, k, rcond=None)
    res = k - A @ coef
    out["bounded"] = (float(np.sqrt(np.mean(res ** 2)) / scale), 0.0, 0.0)
    return out


def singular_order(spec: KernelSpec, dr: float = 1e-4, window: tuple | None = None,
                   tol: float = 1e-3, samples: int = 64) -> SingularityClass:
    """Classify the behaviour of ``k`` near the origin by least squares.

    Fits ``ln k`` against ``ln r`` (power), ``k`` against ``ln r``
    (logarithmic) and ``k`` against ``1, r^2, r^4`` (bounded) on the
    window ``(2 dr, 20 dr)`` and keeps the best model below ``tol``.

    Raises
    ------
    KernelClassificationError
        When no model fits within ``tol``.
    """
    lo, hi = window if window is not None else (2.0 * dr, 20.0 * dr)
    if isinstance(spec, TabulatedRadial):
        lo = max(lo, spec.r_lo)
        hi = min(hi, spec.r_hi)
        if not hi > lo:
            raise KernelClassificationError("fit", "fit window outside the tabulated range")
    r = np.geomspace(lo, hi, samples)
    try:
        k = spec.profile(r)
    except KernelError as exc:
        raise KernelClassificationError("fit", str(exc)) from exc
    if not np.all(np.isfinite(k)):
        raise KernelClassificationError("fit", "non-finite kernel values in fit window")
    fits = _fit_models(r, k)
    # constant or zero kernels are bounded by inspection
    if np.ptp(k) <= 1e-14 * max(np.abs(k).max(), 1e-300):
        fits["bounded"] = (0.0, 0.0, 0.0)
    ok = {name: v for name, v in fits.items() if v[0] <= tol}
    if not ok:
        best = min(fits.items(), key=lambda kv: kv[1][0])
        raise KernelClassificationError(
            "fit", f"no singularity model fits (best {best[0]} residual {best[1][0]:.3e} > {tol:g})")
    name, (res, c, a) = min(ok.items(), key=lambda kv: kv[1][0])
    if name == "power" and a < 1e-6:
        name, c, a = "bounded", 0.0, 0.0
    return SingularityClass(name, c, a, res, (lo, hi))


def critical_exponent(spec: KernelSpec, fit: SingularityClass | None = None) -> float:
    """Critical diffusion exponent ``m* = 1 + alpha/d`` (1 for log or bounded).

    Built-in families use their exact exponent; tabulated kernels use the
    near-origin fit.

    Raises
    ------
    KernelError
        When the power singularity is stronger than Newtonian.
    """
    d = spec.dimension
    info = spec.singularity
    if info is None:
        fit = fit or singular_order(spec)
        kind, alpha = fit.kind, fit.alpha
    else:
        kind, alpha = info.kind, info.alpha
    if kind != "power":
        return 1.0
    if alpha > d - 2 + 1e-6:
        raise KernelError(
            f"singularity exponent alpha={alpha:g} exceeds d-2={d - 2}: kernel not admissible")
    # a fitted exponent within fit noise of the Newtonian bound is the bound
    return 1.0 + min(alpha, d - 2.0) / d


def singularity_coefficient(spec: KernelSpec) -> tuple[str, float, float]:
    """``(kind, c, alpha)`` from exact metadata, else from the fit."""
    info = spec.singularity
    if info is not None:
        return info.kind, info.c, info.alpha
    fit = singular_order(spec)
    return fit.kind, fit.c, fit.alpha


# -- derived kernels -------------------------------------------------------
def bessel_potential_table(dimension: int, screening: float = 1.0, r_min: float = 1e-10,
                           r_max: float = 20.0, per_decade: int = 64) -> TabulatedRadial:
    """Tabulated Bessel potential, the kernel of ``(-Laplace + 1/l^2)^{-1}``.

    Near the origin it follows the Newtonian profile and it decays like
    ``exp(-r/l)`` at large ``r``.  Samples use the modified Bessel closed form.
    """
    n = int(per_decade * math.log10(r_max / r_min)) + 1
    r = np.geomspace(r_min, r_max, n)
    kappa = 1.0 / screening
    nu = 0.5 * dimension - 1.0
    z = kappa * r
    k = (2.0 * math.pi) ** (-0.5 * dimension) * (kappa / r) ** nu * special.kve(nu, z) * np.exp(-z)
    return TabulatedRadial(dimension, r, k, r_max=r_max, source=f"bessel(l={screening:g})")


def mollify(spec: KernelSpec, eps: float, r_max: float | None = None, n: int = 241) -> TabulatedRadial:
    """Gaussian smoothing ``J_eps * K`` of a radial kernel, tabulated.

    The d-dimensional Gaussian of width ``eps`` is averaged over spheres in
    closed form (scaled Bessel function) and integrated radially.
    """
    if not eps > 0:
        raise KernelError("mollifier width must be positive")
    d = spec.dimension
    r_max = spec.r_max if r_max is None else r_max
    nu = 0.5 * d - 1.0
    omega = sphere_area(d)
    norm = (2.0 * math.pi * eps * eps) ** (-0.5 * d)
    kfun = spec._extended if isinstance(spec, TabulatedRadial) else spec.profile

    def gbar(r, s):
        z = r * s / eps ** 2
        if z < 1e-8:
            ratio = 1.0
        else:
            ratio = math.gamma(nu + 1.0) * (0.5 * z) ** (-nu) * special.ive(nu, z)
        return norm * math.exp(-0.5 * (r - s) ** 2 / eps ** 2) * ratio

    rs = np.geomspace(1e-2 * eps, r_max, n)
    vals = []
    for r in rs:
        top = r + 12.0 * eps
        f = lambda s: float(kfun(np.array([s]))[0]) * omega * s ** (d - 1) * gbar(r, s)  # noqa: E731
        pts = sorted({min(r, top), min(eps, top)})
        val, _ = integrate.quad(f, 0.0, top, points=pts, limit=400, epsabs=0.0, epsrel=1e-13)
        vals.append(val)
    return TabulatedRadial(d, rs, np.array(vals), r_max=r_max,
                           source=f"mollified({spec.family}, eps={eps:g})")

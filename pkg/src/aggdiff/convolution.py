"""Discrete convolution operators ``u -> K * u`` on bounded grids.

Cartesian grids use a translation-invariant table of cell averages
``T[p, q] = mean of k(|y|) over the cell offset by (p, q)``, i.e.
``W[i][j] = T[i - j]``.  Cells touching the origin are integrated exactly in
polar form, the rest with an 8x8 Gauss-Legendre rule.  The table is applied
by a zero-padded FFT, which is the linear (non-periodic) convolution
restricted to the square.

Radial grids use the angular (shell) average ``kappa(r, s)`` of the kernel.
Cells at least two apart use ``kappa(r_i, r_j)``; the diagonal band uses the
double cell average, splitting the diagonal cell along ``r = s``.
"""
from __future__ import annotations

import math
from functools import cached_property

import numpy as np

from .grid import GridError, GridHandle
from .kernel import KernelSpec, TabulatedRadial, VirialProfile, sphere_area
from .quadrature import gauss_legendre


class OperatorError(RuntimeError):
    """Convolution-weight construction failed."""


# -- cartesian cell averages ---------------------------------------------------
def _polygon_integral(moment, verts, n=48):
    """``int_P k(|y|) dy`` for a polygon via ``sum_edges cross(a, b) int_0^1 M(|y|)/|y|^2``.

    ``moment(R) = int_0^R k(r) r dr``.  Exact for constant kernels.
    """
    t, w = gauss_legendre(n)
    total = 0.0
    m = len(verts)
    for e in range(m):
        a = np.asarray(verts[e], float)
        b = np.asarray(verts[(e + 1) % m], float)
        cross = a[0] * b[1] - a[1] * b[0]
        if abs(cross) < 1e-300:
            continue
        y = a[None, :] + t[:, None] * (b - a)[None, :]
        rr = np.einsum("ij,ij->i", y, y)
        total += cross * float(np.sum(w * moment(np.sqrt(rr)) / rr))
    return total


def _near_cell(moment, p, q, h, n):
    verts = [((p - 0.5) * h, (q - 0.5) * h), ((p + 0.5) * h, (q - 0.5) * h),
             ((p + 0.5) * h, (q + 0.5) * h), ((p - 0.5) * h, (q + 0.5) * h)]
    return _polygon_integral(moment, verts, n) / (h * h)


def offset_table(profile: KernelSpec, n: int, h: float, order: int = 8, near: int = 1,
                 check: bool = True) -> np.ndarray:
    """Cell averages of ``k(|y|)`` for offsets ``-(n-1)..(n-1)`` in both axes.

    Computed on the octant ``p >= q >= 0`` and mirrored, so the table is
    exactly symmetric under the square's reflection group.
    """
    t, w = gauss_legendre(order)
    P, Q = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = P >= Q
    p = P[mask].astype(float)
    q = Q[mask].astype(float)
    xs = (p[:, None] - 0.5 + t[None, :]) * h
    ys = (q[:, None] - 0.5 + t[None, :]) * h
    vals = np.empty(p.size)
    far = np.maximum(p, q) > near
    idx = np.nonzero(far)[0]
    for s in range(0, idx.size, 4096):
        sl = idx[s:s + 4096]
        r = np.sqrt(xs[sl, :, None] ** 2 + ys[sl, None, :] ** 2)
        kv = profile.profile(r)
        vals[sl] = np.einsum("kij,i,j->k", kv, w, w)
    for k in np.nonzero(~far)[0]:
        v = _near_cell(profile.radial_moment, p[k], q[k], h, 48)
        if check:
            v2 = _near_cell(profile.radial_moment, p[k], q[k], h, 24)
            if not math.isclose(v, v2, rel_tol=1e-9, abs_tol=1e-12 * (abs(v) + 1.0)):
                raise OperatorError(f"singular-cell quadrature did not converge at offset ({p[k]}, {q[k]})")
        vals[k] = v
    oct_ = np.zeros((n, n))
    oct_[P[mask], Q[mask]] = vals
    oct_ = np.where(P >= Q, oct_, oct_.T)
    full = np.empty((2 * n - 1, 2 * n - 1))
    full[n - 1:, n - 1:] = oct_
    full[:n - 1, n - 1:] = oct_[:0:-1, :]
    full[n - 1:, :n - 1] = oct_[:, :0:-1]
    full[:n - 1, :n - 1] = oct_[:0:-1, :0:-1]
    return full


# -- radial shell averages -------------------------------------------------------
def _numeric_shell_average(profile: KernelSpec, d: int, r, s, order: int = 8):
    """``(|S^{d-2}|/|S^{d-1}|) int_0^pi f(|r e - s w|) sin^{d-2}(theta) d theta``.

    Dyadic panels in theta resolve the near-singular region of width
    ``|r - s|/sqrt(r s)`` around ``theta = 0``.
    """
    r = np.asarray(r, float).ravel()
    s = np.asarray(s, float).ravel()
    f = profile._extended if isinstance(profile, TabulatedRadial) else profile.profile
    if isinstance(profile, VirialProfile) and isinstance(profile.base, TabulatedRadial):
        base = profile.base

        def f(x):
            x = np.asarray(x, float)
            y = np.clip(x, base.r_lo, base.r_hi)
            return x * base.profile(y, 1)
    t, w = gauss_legendre(order)
    ratio = sphere_area(d - 1) / sphere_area(d)
    a = np.abs(r - s)
    theta0 = np.maximum(0.5 * a / np.sqrt(r * s), 1e-9)
    depth = np.clip(np.ceil(np.log2(math.pi / theta0)).astype(int), 1, 40)
    out = np.empty(r.size)
    for L in np.unique(depth):
        sel = np.nonzero(depth == L)[0]
        edges = math.pi * 2.0 ** -np.arange(L + 1.0)
        edges = np.append(edges, 0.0)[::-1]
        lo, hi = edges[:-1], edges[1:]
        th = (lo[:, None] + (hi - lo)[:, None] * t[None, :]).ravel()
        wt = ((hi - lo)[:, None] * w[None, :]).ravel() * np.sin(th) ** (d - 2)
        for c in range(0, sel.size, 8192):
            ss = sel[c:c + 8192]
            rr, sv = r[ss, None], s[ss, None]
            dist = np.sqrt((rr - sv) ** 2 + 4.0 * rr * sv * np.sin(0.5 * th)[None, :] ** 2)
            dist = np.maximum(dist, 1e-300)
            out[ss] = ratio * (f(dist) @ wt)
    return out


def shell_kernel(profile: KernelSpec, d: int):
    """Vectorised ``kappa(r, s)`` for a profile in dimension ``d``."""
    closed = profile.shell_average(np.array([1.0]), np.array([0.5]))
    if closed is not None:
        return profile.shell_average
    if d == 3:
        def kappa3(r, s):
            r = np.asarray(r, float)
            s = np.asarray(s, float)
            m = profile.radial_moment
            return (m(r + s) - m(np.abs(r - s))) / (2.0 * r * s)
        return kappa3
    def kappa(r, s):
        r, s = np.broadcast_arrays(np.asarray(r, float), np.asarray(s, float))
        return _numeric_shell_average(profile, d, r, s).reshape(r.shape)
    return kappa


def _band_average(kappa, grid: GridHandle, offset: int, ng: int):
    """Double cell averages of ``kappa`` for pairs ``(i, i + offset)``."""
    d = grid.dimension
    f = grid.faces
    t, w = gauss_legendre(ng)
    n = grid.n
    i = np.arange(n - offset)
    j = i + offset
    omega = sphere_area(d)
    if offset == 0:
        # triangle a < r < s < b, mapped from the unit square; doubled by symmetry
        a, b = f[i][:, None, None], f[i + 1][:, None, None]
        uu, vv = t[None, :, None], t[None, None, :]
        s_ = a + (b - a) * uu
        r_ = a + (s_ - a) * vv
        jac = (b - a) * (s_ - a)
        wts = w[None, :, None] * w[None, None, :]
        val = kappa(r_, s_) * (omega * r_ ** (d - 1)) * (omega * s_ ** (d - 1)) * jac * wts
        num = 2.0 * val.sum(axis=(1, 2))
    else:
        r_ = f[i][:, None, None] + grid.dx * t[None, :, None]
        s_ = f[j][:, None, None] + grid.dx * t[None, None, :]
        wts = w[None, :, None] * w[None, None, :] * grid.dx ** 2
        val = kappa(r_, s_) * (omega * r_ ** (d - 1)) * (omega * s_ ** (d - 1)) * wts
        num = val.sum(axis=(1, 2))
    vol = grid.volumes
    return num / (vol[i] * vol[j])


def radial_matrix(profile: KernelSpec, grid: GridHandle, check: bool = True) -> np.ndarray:
    """Symmetric radial interaction matrix for ``psi_i = sum_j W_ij u_j vol_j``."""
    d = grid.dimension
    kappa = shell_kernel(profile, d)
    rc = grid.centers
    n = grid.n
    W = np.empty((n, n))
    iu = np.triu_indices(n, 2)
    for s in range(0, iu[0].size, 1 << 20):
        a, b = iu[0][s:s + (1 << 20)], iu[1][s:s + (1 << 20)]
        W[a, b] = kappa(rc[a], rc[b])
    for off in (0, 1):
        band = _band_average(kappa, grid, off, 12)
        if check:
            coarse = _band_average(kappa, grid, off, 8)
            err = np.abs(band - coarse) / (np.abs(band) + 1e-300)
            if not np.all(np.isfinite(band)) or err.max() > 1e-4:
                raise OperatorError(
                    f"singular-cell quadrature did not converge (band {off}, rel. change {err.max():.2e})")
        k = np.arange(n - off)
        W[k, k + off] = band
    il = np.tril_indices(n, -1)
    W[il] = W.T[il]
    if not np.all(np.isfinite(W)):
        raise OperatorError("non-finite interaction weights")
    return W


class ConvOperator:
    """Precomputed discrete convolution with a radial kernel on a grid.

    Attributes
    ----------
    grid : GridHandle
    spec : KernelSpec
    table : ndarray
        Cartesian offset table ``T`` (``(2n-1, 2n-1)``) or the dense radial
        matrix ``W``.
    """

    def __init__(self, grid: GridHandle, spec: KernelSpec, check: bool = True):
        if spec.dimension != grid.dimension:
            raise GridError(f"kernel dimension {spec.dimension} does not match grid dimension {grid.dimension}")
        self.grid = grid
        self.spec = spec
        self._check = check
        if grid.is_radial:
            self.table = radial_matrix(spec, grid, check)
        else:
            self.table = offset_table(spec, grid.n, grid.dx, check=check)
            self._fft = self._table_fft(self.table)
        self.table.setflags(write=False)

    # -- construction helpers -------------------------------------------------
    def _table_fft(self, T):
        n = self.grid.n
        pad = np.zeros((2 * n, 2 * n))
        # offset p sits at index p mod 2n (circular size 2n avoids overlap)
        idx = np.r_[np.arange(n), np.arange(-(n - 1), 0)] % (2 * n)
        src = np.r_[np.arange(n - 1, 2 * n - 1), np.arange(0, n - 1)]
        pad[np.ix_(idx, idx)] = T[np.ix_(src, src)]
        return np.fft.rfft2(pad)

    def _apply_table(self, fft_table, m):
        n = self.grid.n
        out = np.fft.irfft2(np.fft.rfft2(m, s=(2 * n, 2 * n)) * fft_table, s=(2 * n, 2 * n))
        return out[:n, :n]

    # -- application ------------------------------------------------------
    def potential(self, u) -> np.ndarray:
        """``psi = K * u`` at cell centres."""
        u = np.asarray(u, float)
        m = u * self.grid.volumes
        if self.grid.is_radial:
            return self.table @ m
        return self._apply_table(self._fft, m)

    def face_velocity(self, u=None, psi=None):
        """``grad K * u`` normal to interior faces, ``(psi_{i+1} - psi_i)/dx``.

        Returns one array (radial, length ``n-1``) or ``(vx, vy)`` with shapes
        ``(n-1, n)`` and ``(n, n-1)``.
        """
        if psi is None:
            psi = self.potential(u)
        h = self.grid.dx
        if self.grid.is_radial:
            return np.diff(psi) / h
        return np.diff(psi, axis=0) / h, np.diff(psi, axis=1) / h

    @property
    def weights(self) -> np.ndarray:
        """Dense ``W[i][j]`` (cartesian grids: assembled from the table, small grids only)."""
        if self.grid.is_radial:
            return self.table
        n = self.grid.n
        if n > 48:
            raise OperatorError("dense cartesian weights only assembled for n <= 48")
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        di = ii.ravel()[:, None] - ii.ravel()[None, :] + n - 1
        dj = jj.ravel()[:, None] - jj.ravel()[None, :] + n - 1
        return self.table[di, dj]

    @property
    def grad_weights(self):
        """Face-difference weights of ``grad K`` (per axis, offset tables in 2D)."""
        h = self.grid.dx
        if self.grid.is_radial:
            return np.diff(self.table, axis=0) / h
        return np.diff(self.table, axis=0) / h, np.diff(self.table, axis=1) / h

    @cached_property
    def virial_table(self):
        """Weights of ``y -> (x - y) . grad K(x - y)`` built like the potential weights."""
        prof = VirialProfile(self.spec)
        if self.grid.is_radial:
            return radial_matrix(prof, self.grid, self._check)
        T = offset_table(prof, self.grid.n, self.grid.dx, check=self._check)
        return T, self._table_fft(T)

    def virial_potential(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        m = u * self.grid.volumes
        if self.grid.is_radial:
            return self.virial_table @ m
        return self._apply_table(self.virial_table[1], m)


def build_conv_operator(grid: GridHandle, spec: KernelSpec, check: bool = True) -> ConvOperator:
    """Build the convolution-weight operator for ``spec`` on ``grid``."""
    return ConvOperator(grid, spec, check)

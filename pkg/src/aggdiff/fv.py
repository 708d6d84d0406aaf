"""Finite-volume flux assembly: numba kernels and numpy twins.

Both backends return ``(rate, outflow)`` where ``rate = du/dt`` per cell and
``outflow`` is the total outgoing flux per unit cell volume, so that
``dt <= u/outflow`` keeps the explicit update non-negative.

The face flux from cell ``i`` to its neighbour ``j`` is
``-(A_j - A_i)/dx + upwind(u) v_f``; boundary faces carry no flux.
"""
from __future__ import annotations

import numpy as np

from . import _accel


# -- numpy backend ---------------------------------------------------------------
def _face_flux_np(u0, u1, a0, a1, v, inv):
    return -(a1 - a0) * inv + np.where(v > 0, u0 * v, u1 * v)


def cart_rhs_numpy(u, a, vx, vy, h):
    inv = 1.0 / h
    rate = np.zeros_like(u)
    out = np.zeros_like(u)
    fx = _face_flux_np(u[:-1], u[1:], a[:-1], a[1:], vx, inv) * inv
    rate[1:] += fx
    rate[:-1] -= fx
    out[:-1] += np.where(fx > 0, fx, 0.0)
    out[1:] -= np.where(fx < 0, fx, 0.0)
    fy = _face_flux_np(u[:, :-1], u[:, 1:], a[:, :-1], a[:, 1:], vy, inv) * inv
    rate[:, 1:] += fy
    rate[:, :-1] -= fy
    out[:, :-1] += np.where(fy > 0, fy, 0.0)
    out[:, 1:] -= np.where(fy < 0, fy, 0.0)
    return rate, out


def radial_rhs_numpy(u, a, v, h, area, vol):
    inv = 1.0 / h
    f = _face_flux_np(u[:-1], u[1:], a[:-1], a[1:], v, inv) * area
    rate = np.zeros_like(u)
    out = np.zeros_like(u)
    rate[1:] += f
    rate[:-1] -= f
    out[:-1] += np.where(f > 0, f, 0.0)
    out[1:] -= np.where(f < 0, f, 0.0)
    return rate / vol, out / vol


# -- numba backend ---------------------------------------------------------------
@_accel.jit
def _cart_rhs_nb(u, a, vx, vy, h, rate, out):
    n0, n1 = u.shape
    inv = 1.0 / h
    for i in range(n0):
        for j in range(n1):
            rate[i, j] = 0.0
            out[i, j] = 0.0
    for i in range(n0 - 1):
        for j in range(n1):
            v = vx[i, j]
            up = u[i, j] * v if v > 0 else u[i + 1, j] * v
            f = (-(a[i + 1, j] - a[i, j]) * inv + up) * inv
            rate[i + 1, j] += f
            rate[i, j] -= f
            if f > 0:
                out[i, j] += f
            elif f < 0:
                out[i + 1, j] -= f
    for i in range(n0):
        for j in range(n1 - 1):
            v = vy[i, j]
            up = u[i, j] * v if v > 0 else u[i, j + 1] * v
            f = (-(a[i, j + 1] - a[i, j]) * inv + up) * inv
            rate[i, j + 1] += f
            rate[i, j] -= f
            if f > 0:
                out[i, j] += f
            elif f < 0:
                out[i, j + 1] -= f


@_accel.jit
def _radial_rhs_nb(u, a, v, h, area, vol, rate, out):
    n = u.shape[0]
    inv = 1.0 / h
    for i in range(n):
        rate[i] = 0.0
        out[i] = 0.0
    for i in range(n - 1):
        vf = v[i]
        up = u[i] * vf if vf > 0 else u[i + 1] * vf
        f = (-(a[i + 1] - a[i]) * inv + up) * area[i]
        rate[i + 1] += f
        rate[i] -= f
        if f > 0:
            out[i] += f
        elif f < 0:
            out[i + 1] -= f
    for i in range(n):
        rate[i] /= vol[i]
        out[i] /= vol[i]


def cart_rhs_numba(u, a, vx, vy, h):
    rate = np.empty_like(u)
    out = np.empty_like(u)
    _cart_rhs_nb(u, a, vx, vy, float(h), rate, out)
    return rate, out


def radial_rhs_numba(u, a, v, h, area, vol):
    rate = np.empty_like(u)
    out = np.empty_like(u)
    _radial_rhs_nb(u, a, v, float(h), area, vol, rate, out)
    return rate, out


def select(backend: str | None = None):
    """``(cart_rhs, radial_rhs)`` for ``backend`` ("numba"/"numpy", default from env)."""
    backend = backend or _accel.BACKEND
    if backend == "numba":
        if not _accel.HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable or disabled")
        return cart_rhs_numba, radial_rhs_numba
    if backend == "numpy":
        return cart_rhs_numpy, radial_rhs_numpy
    raise ValueError(f"unknown backend {backend!r}")


def rhs(grid, u, a, v, backend: str | None = None):
    """Dispatch on grid mode; ``v`` as returned by ``ConvOperator.face_velocity``."""
    cart, rad = select(backend)
    if grid.is_radial:
        return rad(u, a, v, grid.dx, grid.face_areas, grid.volumes)
    vx, vy = v
    return cart(u, a, vx, vy, grid.dx)

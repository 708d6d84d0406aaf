"""Quadrature helpers shared by the kernel, entropy and operator code."""
from __future__ import annotations

from functools import lru_cache
import math
from typing import Callable

import numpy as np


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gl_integrate(f: Callable, a, b, n: int = 16):
    """Vectorised Gauss-Legendre rule of ``f`` over [a, b] (broadcasting)."""
    t, w = gauss_legendre(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    x = a + (b - a) * t
    return np.sum(f(x) * w, axis=-1) * (b - a)[..., 0]


class PanelIntegral:
    """Cumulative integral ``F(x) = int_anchor^x f`` on geometric panels.

    Breakpoints form a geometric ladder around ``anchor`` reaching ``lo``
    and ``hi``.  Each panel is bisected until the 16-point and 8-point
    Gauss-Legendre values agree to ``rtol``.  Panels where ``f`` is no longer
    finite truncate the table, and evaluation beyond the table raises.

    Parameters
    ----------
    f : callable
        Vectorised integrand on (0, inf).
    anchor, lo, hi : float
        Reference point and table limits, ``0 < lo <= anchor <= hi``.
    ratio : float
        Ratio between consecutive coarse breakpoints.
    """

    def __init__(self, f: Callable, anchor: float, lo: float, hi: float,
                 ratio: float = 2.0, rtol: float = 1e-14, atol: float = 1e-300,
                 max_depth: int = 24):
        if not (0.0 < lo <= anchor <= hi):
            raise ValueError("need 0 < lo <= anchor <= hi")
        self.f = f
        self.anchor = float(anchor)
        self.rtol = rtol
        self.atol = atol
        self.max_depth = max_depth
        up = [anchor]
        while up[-1] < hi:
            up.append(min(up[-1] * ratio, hi))
        down = [anchor]
        while down[-1] > lo:
            down.append(max(down[-1] / ratio, lo))
        self.converged = True
        self._budget = 100000
        right_pts, right_vals = self._sweep(up)
        left_pts, left_vals = self._sweep(down)
        pts = np.concatenate([left_pts[::-1], right_pts[1:]])
        vals = np.concatenate([-left_vals[::-1], right_vals[1:]])
        self.breaks = pts
        self.cumulative = vals
        self.lo = float(pts[0])
        self.hi = float(pts[-1])

    def _panel(self, a, b, depth):
        t16, w16 = gauss_legendre(16)
        t8, w8 = gauss_legendre(8)
        # overflow at the far end of the table is expected; it truncates the table
        with np.errstate(over="ignore", invalid="ignore"):
            f16 = self.f(a + (b - a) * t16)
            f8 = self.f(a + (b - a) * t8)
            i16 = float(np.dot(w16, f16) * (b - a))
            i8 = float(np.dot(w8, f8) * (b - a))
        if not (np.isfinite(i16) and np.isfinite(i8)):
            return None
        self._budget -= 1
        # tolerance relative to int |f|, so sign changes cannot stall refinement
        with np.errstate(over="ignore"):
            scale = float(np.dot(w16, np.abs(f16)) * (b - a))
        if abs(i16 - i8) <= max(self.rtol * scale, self.atol):
            return [(b, i16)]
        if depth >= self.max_depth or self._budget <= 0:
            self.converged = False
            return [(b, i16)]
        mid = math.sqrt(a) * math.sqrt(b) if a > 0 and b > 0 else 0.5 * (a + b)
        left = self._panel(a, mid, depth + 1)
        right = self._panel(mid, b, depth + 1)
        if left is None or right is None:
            return None
        return left + right

    def _sweep(self, ladder):
        pts = [ladder[0]]
        vals = [0.0]
        for a, b in zip(ladder[:-1], ladder[1:]):
            lo_, hi_ = (a, b) if a < b else (b, a)
            pieces = self._panel(lo_, hi_, 0)
            if pieces is None:
                break
            if a > b:
                # walk downwards: re-express the pieces from the top
                edges = [lo_] + [p[0] for p in pieces]
                ints = [p[1] for p in pieces]
                for k in range(len(ints) - 1, -1, -1):
                    pts.append(edges[k])
                    vals.append(vals[-1] + ints[k])
            else:
                for e, v in pieces:
                    pts.append(e)
                    vals.append(vals[-1] + v)
        return np.array(pts), np.array(vals)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        if flat.size and (flat.min() < self.lo or flat.max() > self.hi):
            raise ValueError(
                f"argument outside tabulated quadrature range [{self.lo:g}, {self.hi:g}]")
        k = np.clip(np.searchsorted(self.breaks, flat, side="right") - 1, 0, len(self.breaks) - 2)
        base = self.breaks[k]
        out = self.cumulative[k] + gl_integrate(self.f, base, flat, 16)
        return out.reshape(x.shape)

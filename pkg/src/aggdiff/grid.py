"""Uniform grids on the two supported convex domains and cell-averaged fields."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .kernel import sphere_area


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridHandle:
    """Uniform grid over ``[-L/2, L/2]^2`` or over the radial reduction of a d-ball.

    Parameters
    ----------
    mode : {"cartesian2d", "radial"}
    n : int
        Cells per axis (cartesian) or radial cells.
    length : float
        Side length (cartesian) or ball radius (radial).
    dimension : int
        Space dimension; always 2 for the cartesian mode.
    """

    mode: str
    n: int
    length: float
    dimension: int = 2
    ny: int | None = None

    def __post_init__(self):
        if self.mode not in ("cartesian2d", "radial"):
            raise GridError(f"unknown grid mode {self.mode!r}")
        if self.n < 2 or not self.length > 0:
            raise GridError("grid needs n >= 2 cells and positive length")
        if self.mode == "cartesian2d" and self.dimension != 2:
            raise GridError("cartesian grids are two-dimensional")
        if self.mode == "radial" and self.dimension < 2:
            raise GridError("radial grids need dimension >= 2")
        if self.ny is not None and self.ny != self.n:
            raise GridError("only square cartesian grids are supported")

    @classmethod
    def cartesian(cls, n: int, side: float) -> "GridHandle":
        return cls("cartesian2d", int(n), float(side), 2)

    @classmethod
    def radial(cls, n: int, radius: float, dimension: int) -> "GridHandle":
        return cls("radial", int(n), float(radius), int(dimension))

    @property
    def is_radial(self) -> bool:
        return self.mode == "radial"

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) if self.is_radial else (self.n, self.n)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def faces(self) -> np.ndarray:
        """Face coordinates along one axis (radial: ``0 .. R``)."""
        if self.is_radial:
            return np.arange(self.n + 1) * self.dx
        return -0.5 * self.length + np.arange(self.n + 1) * self.dx

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centres along one axis."""
        f = self.faces
        return 0.5 * (f[1:] + f[:-1])

    @cached_property
    def volumes(self) -> np.ndarray:
        """Cell volumes (d-dimensional shell volumes in radial mode)."""
        if self.is_radial:
            d = self.dimension
            f = self.faces
            return sphere_area(d) / d * (f[1:] ** d - f[:-1] ** d)
        return np.full(self.shape, self.dx * self.dx)

    @cached_property
    def face_areas(self) -> np.ndarray:
        """Radial interior-face areas ``|S^{d-1}| r_f^{d-1}`` (faces 1..n-1)."""
        if not self.is_radial:
            return np.full(1, self.dx)
        d = self.dimension
        return sphere_area(d) * self.faces[1:-1] ** (d - 1)

    @cached_property
    def r2(self) -> np.ndarray:
        """``|x|^2`` at cell centres (origin at the domain centre)."""
        c = self.centers
        if self.is_radial:
            return c * c
        return c[:, None] ** 2 + c[None, :] ** 2

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(self.r2)

    @property
    def domain_volume(self) -> float:
        if self.is_radial:
            return sphere_area(self.dimension) / self.dimension * self.length ** self.dimension
        return self.length ** 2

    @property
    def diameter(self) -> float:
        return 2.0 * self.length if self.is_radial else math.sqrt(2.0) * self.length

    def to_dict(self) -> dict:
        return {"mode": self.mode, "n": self.n, "length": self.length, "dimension": self.dimension}


@dataclass
class GridField:
    """Non-negative cell averages on a grid."""

    values: np.ndarray
    grid: GridHandle
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if self.values.shape != self.grid.shape:
            raise GridError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise GridError("field has non-finite values")
        if np.any(self.values < 0):
            raise GridError("density must be non-negative")

    @classmethod
    def trusted(cls, values: np.ndarray, grid: GridHandle) -> "GridField":
        """Wrap ``values`` without validation (solver hot path)."""
        obj = cls.__new__(cls)
        obj.values, obj.grid, obj.meta = values, grid, {}
        return obj

    @property
    def mass(self) -> float:
        return float(np.sum(self.values * self.grid.volumes))

    @property
    def linf(self) -> float:
        return float(self.values.max())

    def lp(self, p: float) -> float:
        return float(np.sum(self.values ** p * self.grid.volumes) ** (1.0 / p))

    def copy(self) -> "GridField":
        return GridField(self.values.copy(), self.grid, dict(self.meta))

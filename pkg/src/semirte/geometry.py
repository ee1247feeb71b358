"""Domain geometry, cell-centred grids, angular quadrature and field containers.

Everything downstream works with plain numpy arrays indexed by the active
cells of a :class:`SpatialGrid` (shape ``(N,)`` for scalar fields and
``(N, Nv)`` for angular fields). :class:`ScalarField` and
:class:`AngularField` wrap such arrays together with their grid for
validation and CSV serialisation.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import DomainError, ModelError

_FMT = "%.17g"


@dataclass(frozen=True)
class Domain:
    """Convex planar domain: a disk or an axis-aligned rectangle.

    The rectangle occupies ``[0, width] x [0, height]``.
    """

    kind: str = "disk"
    radius: float = 1.0
    center: tuple = (0.0, 0.0)
    width: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if self.kind not in ("disk", "rectangle"):
            raise DomainError(f"unknown domain kind {self.kind!r}")
        if self.kind == "disk" and not self.radius > 0:
            raise DomainError("disk radius must be positive")
        if self.kind == "rectangle" and not (self.width > 0 and self.height > 0):
            raise DomainError("rectangle sides must be positive")

    @classmethod
    def unit_disk(cls):
        return cls("disk", radius=1.0)

    @classmethod
    def rectangle(cls, width, height):
        return cls("rectangle", width=float(width), height=float(height))

    @property
    def diameter(self):
        if self.kind == "disk":
            return 2.0 * self.radius
        return math.hypot(self.width, self.height)

    @property
    def area(self):
        if self.kind == "disk":
            return math.pi * self.radius ** 2
        return self.width * self.height

    @property
    def bbox(self):
        """(xmin, ymin, xmax, ymax)."""
        if self.kind == "disk":
            cx, cy = self.center
            r = self.radius
            return (cx - r, cy - r, cx + r, cy + r)
        return (0.0, 0.0, self.width, self.height)

    def boundary_distance(self, points):
        """Signed distance to the boundary, positive inside."""
        p = np.asarray(points, dtype=float)
        if self.kind == "disk":
            return self.radius - np.hypot(p[..., 0] - self.center[0],
                                          p[..., 1] - self.center[1])
        return np.minimum.reduce([p[..., 0], self.width - p[..., 0],
                                  p[..., 1], self.height - p[..., 1]])

    def contains(self, points):
        """True for points strictly inside the domain."""
        return self.boundary_distance(points) > 0.0

    def exit_distance(self, points, directions):
        """Distance travelled from ``points`` along ``directions`` to the boundary.

        Broadcasts over leading dimensions. To obtain tau_-(x, v) pass ``-v``.
        """
        p = np.asarray(points, dtype=float)
        d = np.asarray(directions, dtype=float)
        if self.kind == "disk":
            rx = p[..., 0] - self.center[0]
            ry = p[..., 1] - self.center[1]
            b = rx * d[..., 0] + ry * d[..., 1]
            c = rx * rx + ry * ry - self.radius ** 2
            disc = np.maximum(b * b - c, 0.0)
            return -b + np.sqrt(disc)
        with np.errstate(divide="ignore", invalid="ignore"):
            tx = np.where(d[..., 0] > 0, (self.width - p[..., 0]) / d[..., 0],
                          np.where(d[..., 0] < 0, -p[..., 0] / d[..., 0], np.inf))
            ty = np.where(d[..., 1] > 0, (self.height - p[..., 1]) / d[..., 1],
                          np.where(d[..., 1] < 0, -p[..., 1] / d[..., 1], np.inf))
        return np.minimum(tx, ty)

    def outward_normal(self, points):
        """Outward unit normal at boundary points (nearest face for rectangles)."""
        p = np.asarray(points, dtype=float)
        if self.kind == "disk":
            r = p - np.asarray(self.center)
            return r / np.linalg.norm(r, axis=-1, keepdims=True)
        gaps = np.stack([p[..., 0], self.width - p[..., 0],
                         p[..., 1], self.height - p[..., 1]], axis=-1)
        normals = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
        return normals[np.argmin(gaps, axis=-1)]

    def to_dict(self):
        if self.kind == "disk":
            return {"shape": "disk", "radius": self.radius, "center": list(self.center)}
        return {"shape": "rectangle", "width": self.width, "height": self.height}


def exit_distance(x, v, dom):
    """tau_-(x, v): distance from ``x`` to the boundary travelling along ``-v``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if not np.all(dom.contains(x)):
        raise DomainError(f"point {x.tolist()} is not inside the domain")
    if not np.allclose(np.linalg.norm(v, axis=-1), 1.0, atol=1e-12):
        raise DomainError("direction must be a unit vector")
    return dom.exit_distance(x, -v)


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Uniform Cartesian grid of cell centres masked to a domain.

    Values are stored on active cells only. ``fill_index`` maps every cell of
    the bounding box to its nearest active cell; it is what makes bilinear
    interpolation near the curved boundary well defined.
    """

    domain: Domain
    h: float
    x0: float
    y0: float
    nx: int
    ny: int
    mask: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, domain, h):
        if not h > 0:
            raise DomainError("cell size must be positive")
        xmin, ymin, xmax, ymax = domain.bbox
        nx = max(2, int(math.ceil((xmax - xmin) / h - 1e-9)))
        ny = max(2, int(math.ceil((ymax - ymin) / h - 1e-9)))
        # centre the (possibly slightly larger) box on the domain box
        x0 = 0.5 * (xmin + xmax) - 0.5 * nx * h
        y0 = 0.5 * (ymin + ymax) - 0.5 * ny * h
        xs = x0 + (np.arange(nx) + 0.5) * h
        ys = y0 + (np.arange(ny) + 0.5) * h
        X, Y = np.meshgrid(xs, ys)
        mask = domain.contains(np.stack([X, Y], axis=-1))
        if mask.sum() < 1:
            raise DomainError("grid has no active cells; reduce h")
        return cls(domain, float(h), float(x0), float(y0), nx, ny, mask)

    @cached_property
    def flat_active(self):
        """Flat (row-major, y then x) box indices of the active cells."""
        return np.flatnonzero(self.mask.ravel())

    @property
    def n(self):
        return int(self.flat_active.size)

    @property
    def cell_area(self):
        return self.h * self.h

    @property
    def active_area(self):
        return self.n * self.cell_area

    @cached_property
    def centers(self):
        iy, ix = np.divmod(self.flat_active, self.nx)
        return np.column_stack([self.x0 + (ix + 0.5) * self.h,
                                self.y0 + (iy + 0.5) * self.h])

    @cached_property
    def active_lookup(self):
        """Box-shaped int array with the active index, -1 outside."""
        out = -np.ones(self.nx * self.ny, dtype=np.int64)
        out[self.flat_active] = np.arange(self.n)
        return out.reshape(self.ny, self.nx)

    @cached_property
    def fill_index(self):
        _, (iy, ix) = ndimage.distance_transform_edt(~self.mask, return_indices=True)
        return np.ascontiguousarray(self.active_lookup[iy, ix].ravel())

    @cached_property
    def boundary_distance(self):
        return self.domain.boundary_distance(self.centers)

    def full(self, values):
        """Expand active-cell values to the box with nearest-cell extension."""
        values = np.asarray(values, dtype=float)
        return np.ascontiguousarray(values[..., self.fill_index])

    def image(self, values, fill=np.nan):
        """Box-shaped image of an active-cell field (for plotting and debugging)."""
        out = np.full(self.nx * self.ny, fill, dtype=float)
        out[self.flat_active] = values
        return out.reshape(self.ny, self.nx)

    @property
    def kernel_grid(self):
        return (self.x0, self.y0, self.h, self.nx, self.ny)

    def integrate(self, values):
        """Midpoint quadrature of an active-cell field over the domain."""
        return float(np.sum(values) * self.cell_area)

    def lp_norm(self, values, p):
        values = np.abs(np.asarray(values, dtype=float))
        if math.isinf(p):
            return float(values.max(initial=0.0))
        return float((np.sum(values ** p) * self.cell_area) ** (1.0 / p))

    def constant(self, c):
        return np.full(self.n, float(c))

    def evaluate(self, fn):
        """Sample ``fn(x, y)`` at the active cell centres."""
        c = self.centers
        return np.broadcast_to(np.asarray(fn(c[:, 0], c[:, 1]), dtype=float),
                               (self.n,)).copy()


@dataclass(frozen=True, eq=False)
class AngularQuadrature:
    """Uniformly spaced directions on the unit circle with weights 1/Nv.

    Angles are ``2 pi (j + 1/2) / Nv`` so no direction is parallel to a grid
    axis; the set is closed under ``v -> -v`` because Nv is even.
    """

    nv: int

    def __post_init__(self):
        if self.nv < 2 or self.nv % 2:
            raise ModelError("number of directions must be even and >= 2")

    @cached_property
    def theta(self):
        return 2.0 * np.pi * (np.arange(self.nv) + 0.5) / self.nv

    @cached_property
    def directions(self):
        return np.ascontiguousarray(np.column_stack([np.cos(self.theta), np.sin(self.theta)]))

    @cached_property
    def weights(self):
        return np.full(self.nv, 1.0 / self.nv)

    def opposite(self):
        """Index permutation j -> index of -v_j."""
        return (np.arange(self.nv) + self.nv // 2) % self.nv


def angular_average(u, quad=None):
    """<u>(x) = sum_j w_j u(x, v_j) for an (N, Nv) angular field."""
    u = np.asarray(u, dtype=float)
    if quad is None:
        return u.mean(axis=-1)
    return u @ quad.weights


def broadcast(m, nv):
    """Angle-independent angular field from a scalar field."""
    return np.repeat(np.asarray(m, dtype=float)[:, None], nv, axis=1)


@dataclass(frozen=True, eq=False)
class ScatteringModel:
    """Discrete scattering operator K.

    ``kernel[j, k]`` tabulates p(v_j, v_k); ``(K u)_j = sum_k w_k p_jk u_k``.
    The isotropic model has p = 1 and reduces K to the angular average.
    """

    quad: AngularQuadrature
    kind: str = "isotropic"
    kernel: np.ndarray | None = field(default=None, repr=False)
    atol: float = 1e-10

    def __post_init__(self):
        if self.kind == "isotropic":
            object.__setattr__(self, "kernel", np.ones((self.quad.nv, self.quad.nv)))
        elif self.kind == "tabulated":
            p = np.asarray(self.kernel, dtype=float)
            w = self.quad.weights
            if p.shape != (self.quad.nv, self.quad.nv):
                raise ModelError("scattering kernel must be Nv x Nv")
            if np.any(p < 0):
                raise ModelError("scattering kernel must be nonnegative")
            if (np.abs(p @ w - 1).max() > self.atol or np.abs(w @ p - 1).max() > self.atol):
                raise ModelError("scattering kernel rows and columns must integrate to 1")
            object.__setattr__(self, "kernel", p)
        else:
            raise ModelError(f"unknown scattering kind {self.kind!r}")

    @classmethod
    def isotropic(cls, quad):
        return cls(quad)

    @classmethod
    def henyey_greenstein(cls, quad, g):
        """Circular (2-D) Henyey-Greenstein phase function, renormalised on the grid."""
        if not -1 < g < 1:
            raise ModelError("anisotropy g must lie in (-1, 1)")
        dtheta = quad.theta[:, None] - quad.theta[None, :]
        p = (1 - g * g) / (1 + g * g - 2 * g * np.cos(dtheta))
        p /= p @ quad.weights
        return cls(quad, "tabulated", p)

    @property
    def is_isotropic(self):
        return self.kind == "isotropic"

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        if self.is_isotropic:
            return broadcast(angular_average(u, self.quad), self.quad.nv)
        return u @ (self.kernel * self.quad.weights[None, :]).T


def apply_scattering(K, u):
    """K u for an (N, Nv) angular field."""
    return K.apply(u)


@dataclass(frozen=True, eq=False)
class BoundarySource:
    """Incoming boundary data f_-(x, v) with bounds 0 < f_lower <= f_- <= f_upper."""

    fn: Callable
    f_lower: float
    f_upper: float
    label: str = "custom"
    value: float | None = None

    def __post_init__(self):
        if not (0 < self.f_lower <= self.f_upper < math.inf):
            raise ModelError("boundary source needs 0 < f_lower <= f_upper < inf")

    @classmethod
    def constant(cls, c):
        c = float(c)
        return cls(lambda x, v: np.full(np.broadcast_shapes(x.shape[:-1], v.shape[:-1]), c),
                   c, c, label=f"constant({c:g})", value=c)

    @classmethod
    def isotropic(cls, f0, f_lower, f_upper, label="isotropic"):
        """f_-(x, v) = f0(x) for a callable f0(x, y)."""
        def fn(x, v):
            vals = np.asarray(f0(x[..., 0], x[..., 1]), dtype=float)
            return np.broadcast_to(vals, np.broadcast_shapes(x.shape[:-1], v.shape[:-1])).copy()
        return cls(fn, float(f_lower), float(f_upper), label=label)

    def __call__(self, x, v):
        vals = np.asarray(self.fn(np.asarray(x, float), np.asarray(v, float)), dtype=float)
        slack = 1e-12 * max(1.0, self.f_upper)
        if np.any(vals < self.f_lower - slack) or np.any(vals > self.f_upper + slack):
            raise ModelError(f"boundary source {self.label} leaves [f_lower, f_upper]")
        return vals

    def scaled(self, factor):
        factor = float(factor)
        return BoundarySource(lambda x, v: factor * self.fn(x, v), factor * self.f_lower,
                              factor * self.f_upper, label=f"{factor:g}*{self.label}",
                              value=None if self.value is None else factor * self.value)


class Discretization:
    """A domain, its spatial grid and an angular quadrature, with ray geometry cached."""

    def __init__(self, domain, h, nv):
        self.domain = domain
        self.grid = SpatialGrid.build(domain, h)
        self.quad = AngularQuadrature(int(nv))

    @classmethod
    def unit_disk(cls, h=1 / 32, nv=32):
        return cls(Domain.unit_disk(), h, nv)

    @property
    def n(self):
        return self.grid.n

    @property
    def nv(self):
        return self.quad.nv

    @cached_property
    def tau_minus(self):
        """(N, Nv) exit distances tau_-(x_i, v_j)."""
        c = self.grid.centers[:, None, :]
        d = -self.quad.directions[None, :, :]
        return np.ascontiguousarray(self.domain.exit_distance(c, d))

    @cached_property
    def exit_points(self):
        """(N, Nv, 2) boundary points x_i - tau_-(x_i, v_j) v_j."""
        return (self.grid.centers[:, None, :]
                - self.tau_minus[..., None] * self.quad.directions[None, :, :])

    def boundary_values(self, source):
        """f_- evaluated at the exact exit point of every (cell, direction) ray."""
        return source(self.exit_points, self.quad.directions[None, :, :])

    def describe(self):
        return {"domain": self.domain.to_dict(), "h": self.grid.h, "nv": self.nv,
                "active_cells": self.n, "box": [self.grid.nx, self.grid.ny]}


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"scalar field needs {self.grid.n} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("scalar field has non-finite entries")
        object.__setattr__(self, "values", v)

    def to_csv(self, path):
        c = self.grid.centers
        with open(path, "w", newline="") as fh:
            fh.write("x,y,value\n")
            for (x, y), val in zip(c, self.values):
                fh.write(f"{_FMT % x},{_FMT % y},{_FMT % val}\n")

    @classmethod
    def from_csv(cls, path, grid):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        pts = np.array([[float(r["x"]), float(r["y"])] for r in rows])
        vals = np.array([float(r["value"]) for r in rows])
        if len(vals) != grid.n or not np.allclose(pts, grid.centers, atol=1e-9 * max(1.0, grid.h)):
            raise ValueError(f"{path}: field does not match the grid")
        return cls(grid, vals)


@dataclass(frozen=True, eq=False)
class AngularField:
    grid: SpatialGrid
    quad: AngularQuadrature
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n, self.quad.nv):
            raise ValueError("angular field shape does not match (cells, directions)")
        if not np.all(np.isfinite(v)):
            raise ValueError("angular field has non-finite entries")
        object.__setattr__(self, "values", v)

    def mean(self):
        return ScalarField(self.grid, angular_average(self.values, self.quad))

    def to_csv(self, path):
        c = self.grid.centers
        th = self.quad.theta
        with open(path, "w", newline="") as fh:
            fh.write("x,y,theta,value\n")
            for i, (x, y) in enumerate(c):
                xs, ys = _FMT % x, _FMT % y
                for j, t in enumerate(th):
                    fh.write(f"{xs},{ys},{_FMT % t},{_FMT % self.values[i, j]}\n")

    @classmethod
    def from_csv(cls, path, grid, quad):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[0] != grid.n * quad.nv:
            raise ValueError(f"{path}: angular field does not match the grid")
        return cls(grid, quad, data[:, 3].reshape(grid.n, quad.nv))

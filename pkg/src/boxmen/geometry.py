"""Circuit description: shielding box, layer stacks, metallization, ports.

All lengths are in meters.  The cross section of the box is the rectangle
``[0, a] x [0, b]`` in the discontinuity plane; the aperture is whatever part
of that rectangle is not covered by metal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon, box as shapely_box
from shapely.ops import unary_union

# Relative slack used for "is inside" predicates on floating-point geometry.
_GEOM_RTOL = 1e-9

MIN_GRID = 16


class GeometryError(ValueError):
    """Invalid or inconsistent circuit geometry."""


@dataclass(frozen=True)
class Box:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise GeometryError(f"box dimensions must be positive, got a={self.a}, b={self.b}")

    @property
    def area(self) -> float:
        return self.a * self.b

    def polygon(self) -> Polygon:
        return shapely_box(0.0, 0.0, self.a, self.b)


@dataclass(frozen=True)
class Layer:
    eps_r: float
    thickness: float
    tan_delta: float = 0.0

    def __post_init__(self):
        if self.eps_r < 1.0:
            raise GeometryError(f"relative permittivity must be >= 1, got {self.eps_r}")
        if self.tan_delta < 0.0:
            raise GeometryError(f"loss tangent must be >= 0, got {self.tan_delta}")
        if not self.thickness > 0.0:
            raise GeometryError(f"layer thickness must be > 0, got {self.thickness}")

    @property
    def eps_complex(self) -> complex:
        return complex(self.eps_r, -self.eps_r * self.tan_delta)


@dataclass(frozen=True)
class LayerStack:
    """Layers on both sides of the discontinuity plane.

    Each side is listed starting at the discontinuity plane and ending at the
    PEC wall.  Side 1 is ``below`` (z < 0), side 2 is ``above``.
    """

    below: tuple[Layer, ...]
    above: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "below", tuple(self.below))
        object.__setattr__(self, "above", tuple(self.above))
        if not self.below or not self.above:
            raise GeometryError("each side of the layer stack needs at least one layer")

    def side(self, delta: int) -> tuple[Layer, ...]:
        if delta == 1:
            return self.below
        if delta == 2:
            return self.above
        raise ValueError(f"side index must be 1 or 2, got {delta}")

    @property
    def height_below(self) -> float:
        return sum(layer.thickness for layer in self.below)

    @property
    def height_above(self) -> float:
        return sum(layer.thickness for layer in self.above)


@dataclass(frozen=True)
class MetalPolygon:
    shell: tuple[tuple[float, float], ...]
    holes: tuple[tuple[tuple[float, float], ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "shell", tuple((float(x), float(y)) for x, y in self.shell))
        object.__setattr__(
            self, "holes", tuple(tuple((float(x), float(y)) for x, y in h) for h in self.holes)
        )

    def to_shapely(self) -> Polygon:
        return Polygon(self.shell, self.holes)


@dataclass(frozen=True)
class Metallization:
    polygons: tuple[MetalPolygon, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "polygons", tuple(self.polygons))

    @classmethod
    def from_rects(cls, *rects: tuple[float, float, float, float]) -> "Metallization":
        """Build from ``(x0, y0, x1, y1)`` rectangles."""
        polys = []
        for x0, y0, x1, y1 in rects:
            polys.append(MetalPolygon(((x0, y0), (x1, y0), (x1, y1), (x0, y1))))
        return cls(tuple(polys))

    def union(self):
        return unary_union([p.to_shapely() for p in self.polygons])


@dataclass(frozen=True)
class Port:
    """Lumped pulse port.

    The impressed current flows along ``orientation`` across a short gap of
    extent ``length``; ``width`` is the pulse width transverse to the current
    (the 1/width amplitude normalization is applied by the solver).
    """

    id: int
    center: tuple[float, float]
    width: float
    length: float
    orientation: str = "x"
    role: str = "external"

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.orientation not in ("x", "y"):
            raise GeometryError(f"port {self.id}: orientation must be 'x' or 'y'")
        if self.role not in ("external", "internal"):
            raise GeometryError(f"port {self.id}: role must be 'external' or 'internal'")
        if not self.width > 0:
            raise GeometryError(f"port {self.id}: width must be > 0")
        if not self.length > 0:
            raise GeometryError(f"port {self.id}: length must be > 0")

    def rect(self) -> tuple[float, float, float, float]:
        """Port footprint as ``(x0, y0, x1, y1)``."""
        x0, y0 = self.center
        if self.orientation == "x":
            hx, hy = self.length / 2, self.width / 2
        else:
            hx, hy = self.width / 2, self.length / 2
        return (x0 - hx, y0 - hy, x0 + hx, y0 + hy)

    @property
    def direction(self) -> tuple[float, float]:
        """Unit vector of the pulse in the discontinuity plane (z x current)."""
        return (0.0, 1.0) if self.orientation == "x" else (-1.0, 0.0)


@dataclass(frozen=True)
class Numerics:
    n_basis: int = 600
    n_kernel_static: int = 4000
    n_kernel_dynamic: int = 100
    n_accessible: int = 1
    grid_nx: int = 256
    grid_ny: int = 256
    n_box_modes: int | None = None

    def __post_init__(self):
        if self.n_basis < 1:
            raise GeometryError("n_basis must be >= 1")
        if self.n_accessible < 0:
            raise GeometryError("n_accessible must be >= 0")
        if self.n_kernel_static <= self.n_accessible:
            raise GeometryError("n_kernel_static must exceed n_accessible")
        if self.n_kernel_dynamic < 0 or self.n_kernel_dynamic > self.n_kernel_static:
            raise GeometryError("n_kernel_dynamic must lie in [0, n_kernel_static]")
        if min(self.grid_nx, self.grid_ny) < MIN_GRID:
            raise GeometryError(f"grid must be at least {MIN_GRID} cells per side")
        if self.n_box_modes is not None and self.n_box_modes < self.n_kernel_static:
            raise GeometryError("n_box_modes must be >= n_kernel_static")

    @property
    def box_modes(self) -> int:
        return self.n_box_modes if self.n_box_modes is not None else self.n_kernel_static


@dataclass(frozen=True)
class Sweep:
    f_start: float
    f_stop: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 1:
            raise GeometryError("sweep needs at least one point")
        if not (0 < self.f_start <= self.f_stop):
            raise GeometryError("sweep frequencies must satisfy 0 < f_start <= f_stop")

    def frequencies(self) -> np.ndarray:
        if self.n_points == 1:
            return np.array([self.f_start])
        return np.linspace(self.f_start, self.f_stop, self.n_points)


@dataclass(frozen=True)
class CircuitSpec:
    box: Box
    layers: LayerStack
    metal: Metallization
    ports: tuple[Port, ...]
    numerics: Numerics = field(default_factory=Numerics)
    sweep: Sweep | None = None

    def __post_init__(self):
        object.__setattr__(self, "ports", tuple(self.ports))
        validate_geometry(self.box, self.metal, self.ports)


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Raster of the aperture; ``grid[i, j]`` is the cell at x index i, y index j."""

    grid: np.ndarray
    box: Box
    aperture: object  # shapely geometry

    @property
    def nx(self) -> int:
        return self.grid.shape[0]

    @property
    def ny(self) -> int:
        return self.grid.shape[1]

    @property
    def hx(self) -> float:
        return self.box.a / self.nx

    @property
    def hy(self) -> float:
        return self.box.b / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xc = (np.arange(self.nx) + 0.5) * self.hx
        yc = (np.arange(self.ny) + 0.5) * self.hy
        return xc, yc

    @property
    def true_fraction(self) -> float:
        return float(self.grid.mean())

    @property
    def aperture_area(self) -> float:
        return float(self.aperture.area)


def _check_polygon(poly: Polygon, box: Box, label: str) -> None:
    if poly.convex_hull.area <= 0.0:
        raise GeometryError(f"{label}: degenerate polygon (zero area)")
    if not poly.is_valid:
        raise GeometryError(f"{label}: polygon is not simple ({shapely.is_valid_reason(poly)})")
    tol = _GEOM_RTOL * max(box.a, box.b)
    x0, y0, x1, y1 = poly.bounds
    if x0 < -tol or y0 < -tol or x1 > box.a + tol or y1 > box.b + tol:
        raise GeometryError(f"{label}: polygon lies outside the box")


def aperture_polygon(box: Box, metal: Metallization):
    """Exact aperture: box rectangle minus the union of all metal polygons."""
    for k, p in enumerate(metal.polygons):
        _check_polygon(p.to_shapely(), box, f"metal[{k}]")
    if not metal.polygons:
        return box.polygon()
    return box.polygon().difference(metal.union())


def validate_geometry(box: Box, metal: Metallization, ports: Sequence[Port]) -> None:
    ap = aperture_polygon(box, metal)
    ids = [p.id for p in ports]
    if len(set(ids)) != len(ids):
        raise GeometryError("port ids must be unique")
    tol = _GEOM_RTOL * max(box.a, box.b)
    grown = ap.buffer(tol)
    for p in ports:
        rect = shapely_box(*p.rect())
        if not box.polygon().buffer(tol).covers(rect):
            raise GeometryError(f"port {p.id} lies outside the box")
        if not grown.covers(rect):
            raise GeometryError(f"port {p.id}: port intersects metallization")


def build_aperture(box: Box, metal: Metallization, nx: int, ny: int) -> RegionMask:
    """Rasterize the aperture: a cell is aperture iff its center is in the aperture."""
    if min(nx, ny) < MIN_GRID:
        raise GeometryError(f"grid must be at least {MIN_GRID} cells per side")
    ap = aperture_polygon(box, metal)
    xc = (np.arange(nx) + 0.5) * (box.a / nx)
    yc = (np.arange(ny) + 0.5) * (box.b / ny)
    X, Y = np.meshgrid(xc, yc, indexing="ij")
    if metal.polygons:
        grid = ~shapely.contains_xy(metal.union(), X, Y)
        # centers exactly on a metal edge count as metal
        grid &= ~shapely.intersects_xy(metal.union().boundary, X, Y)
    else:
        grid = np.ones((nx, ny), dtype=bool)
    return RegionMask(grid=grid, box=box, aperture=ap)


def port_cells(mask: RegionMask, port: Port) -> np.ndarray:
    """Boolean raster of cells whose centers fall inside the port footprint."""
    x0, y0, x1, y1 = port.rect()
    xc, yc = mask.cell_centers()
    inx = (xc > x0) & (xc < x1)
    iny = (yc > y0) & (yc < y1)
    return inx[:, None] & iny[None, :]

"""Cell-centered grids over rectangular boxes and rasterized subdomain masks.

A mask is a union of closed grid cells, so its volume is exactly
``h**2 * count``.  Cells are indexed row-major: cell ``(j, i)`` (row ``j`` along
y, column ``i`` along x) has flat index ``j * nx + i`` and center
``((i + 1/2) h, (j + 1/2) h)``.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_ANISO_TOL = 1e-9


class GeometryError(ValueError):
    """Invalid grid, shape or mask request."""


@dataclass(frozen=True)
class Grid:
    Lx: float
    Ly: float
    nx: int
    ny: int
    h: float

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise GeometryError(f"grid needs at least 4 cells per axis, got {self.nx}x{self.ny}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(X, Y)`` arrays of cell-center coordinates, shape ``(ny, nx)``."""
        x = (np.arange(self.nx) + 0.5) * self.h
        y = (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(x, y)


def make_grid(Lx: float, Ly: float, n_per_unit: int) -> Grid:
    """Isotropic grid on ``(0, Lx) x (0, Ly)`` with ``n_per_unit`` cells per unit length."""
    if Lx <= 0 or Ly <= 0:
        raise GeometryError(f"box dimensions must be positive, got {Lx}x{Ly}")
    if n_per_unit <= 0:
        raise GeometryError("n_per_unit must be positive")
    fx, fy = Lx * n_per_unit, Ly * n_per_unit
    nx, ny = round(fx), round(fy)
    if abs(fx - nx) > _ANISO_TOL * max(1.0, fx) or abs(fy - ny) > _ANISO_TOL * max(1.0, fy):
        raise GeometryError(
            f"box {Lx}x{Ly} is not an integral number of cells at {n_per_unit} per unit")
    return Grid(float(Lx), float(Ly), int(nx), int(ny), 1.0 / n_per_unit)


# ---------------------------------------------------------------------------
# masks

@dataclass(frozen=True, eq=False)
class DomainMask:
    """Set of grid cells, stored as a read-only boolean array of shape ``grid.shape``."""

    grid: Grid
    cells: np.ndarray
    count: int = field(init=False)
    volume: float = field(init=False)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=bool)
        if cells.shape != self.grid.shape:
            raise GeometryError(f"mask shape {cells.shape} does not match grid {self.grid.shape}")
        cells = cells.copy()
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        count = int(cells.sum())
        object.__setattr__(self, "count", count)
        object.__setattr__(self, "volume", count * self.grid.cell_area)

    @classmethod
    def from_flat_indices(cls, grid: Grid, idx) -> "DomainMask":
        flat = np.zeros(grid.size, dtype=bool)
        flat[np.asarray(idx, dtype=np.int64)] = True
        return cls(grid, flat.reshape(grid.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.cells.ravel()

    def indices(self) -> np.ndarray:
        """Flat row-major indices of the member cells (sorted)."""
        return np.flatnonzero(self.flat)

    def digest(self) -> str:
        """Short stable hash of the cell set (and grid size)."""
        hsh = hashlib.sha1(f"{self.grid.nx}x{self.grid.ny}:".encode())
        hsh.update(np.packbits(self.flat).tobytes())
        return hsh.hexdigest()[:16]

    def _check_same(self, other: "DomainMask"):
        if other.grid != self.grid:
            raise GeometryError("masks live on different grids")

    def __or__(self, other: "DomainMask") -> "DomainMask":
        self._check_same(other)
        return DomainMask(self.grid, self.cells | other.cells)

    def __and__(self, other: "DomainMask") -> "DomainMask":
        self._check_same(other)
        return DomainMask(self.grid, self.cells & other.cells)

    def __sub__(self, other: "DomainMask") -> "DomainMask":
        self._check_same(other)
        return DomainMask(self.grid, self.cells & ~other.cells)

    def __eq__(self, other):
        if not isinstance(other, DomainMask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash(self.digest())

    def issubset(self, other: "DomainMask") -> bool:
        self._check_same(other)
        return not np.any(self.cells & ~other.cells)

    def symmetric_difference_volume(self, other: "DomainMask") -> float:
        self._check_same(other)
        return int(np.count_nonzero(self.cells ^ other.cells)) * self.grid.cell_area

    # -- plain-text export ------------------------------------------------
    def to_text(self) -> str:
        """Header ``"nx ny h"`` then one line of 0/1 characters per grid row (row 0 first)."""
        lines = [f"{self.grid.nx} {self.grid.ny} {self.grid.h!r}"]
        digits = np.where(self.cells, "1", "0")
        lines.extend("".join(row) for row in digits)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DomainMask":
        lines = text.strip("\n").split("\n")
        nx_s, ny_s, h_s = lines[0].split()
        nx, ny, h = int(nx_s), int(ny_s), float(h_s)
        rows = lines[1:]
        if len(rows) != ny or any(len(r) != nx for r in rows):
            raise GeometryError("mask text does not match its header")
        cells = np.array([[c == "1" for c in r] for r in rows], dtype=bool)
        return cls(Grid(nx * h, ny * h, nx, ny, h), cells)


def full_mask(grid: Grid) -> DomainMask:
    return DomainMask(grid, np.ones(grid.shape, dtype=bool))


def mask_from_predicate(grid: Grid, pred: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> DomainMask:
    """Cells whose centers satisfy ``pred(X, Y)``; no containment checks."""
    X, Y = grid.centers()
    return DomainMask(grid, np.asarray(pred(X, Y), dtype=bool))


# ---------------------------------------------------------------------------
# parametric shapes
#
# Each shape is the open sublevel set {level < size} of a level function, which
# gives both center-membership rasterization and the exact-volume variant.

_EPS = 1e-12


def _corner_point(corner, Lx, Ly):
    cx, cy = corner
    ok = lambda v, L: abs(v) <= _EPS or abs(v - L) <= _EPS
    if not (ok(cx, Lx) and ok(cy, Ly)):
        raise GeometryError(f"{corner} is not a vertex of the box")
    return float(cx), float(cy)


@dataclass(frozen=True)
class QuarterDisk:
    """Disk of radius ``r`` centered at a box vertex, intersected with the box."""
    corner: tuple[float, float]
    r: float
    kind = "quarter-disk"

    def level(self, X, Y):
        return np.hypot(X - self.corner[0], Y - self.corner[1])

    @property
    def size(self):
        return self.r

    def with_size(self, s):
        return QuarterDisk(self.corner, s)

    def check(self, Lx, Ly):
        _corner_point(self.corner, Lx, Ly)
        if not 0 < self.r <= min(Lx, Ly):
            raise GeometryError(f"quarter disk of radius {self.r} does not fit the box")

    def area(self, Lx, Ly):
        return math.pi * self.r ** 2 / 4

    def size_for_area(self, a, Lx, Ly):
        return math.sqrt(4 * a / math.pi)

    def perimeter(self, Lx, Ly):
        return math.pi * self.r / 2


def _edge_axis(center, Lx, Ly):
    cx, cy = center
    on_x = abs(cy) <= _EPS or abs(cy - Ly) <= _EPS   # bottom/top edge
    on_y = abs(cx) <= _EPS or abs(cx - Lx) <= _EPS   # left/right edge
    if not (on_x or on_y):
        raise GeometryError(f"{center} is not on the box boundary")
    return on_x, on_y


@dataclass(frozen=True)
class HalfDisk:
    """Disk of radius ``r`` centered at a flat point of the box boundary."""
    center: tuple[float, float]
    r: float
    kind = "half-disk"

    def level(self, X, Y):
        return np.hypot(X - self.center[0], Y - self.center[1])

    @property
    def size(self):
        return self.r

    def with_size(self, s):
        return HalfDisk(self.center, s)

    def check(self, Lx, Ly):
        on_x, on_y = _edge_axis(self.center, Lx, Ly)
        if on_x and on_y:
            raise GeometryError("half disk centered at a vertex; use QuarterDisk")
        cx, cy = self.center
        if on_x:
            ok = self.r <= min(cx, Lx - cx) + _EPS and self.r <= Ly + _EPS
        else:
            ok = self.r <= min(cy, Ly - cy) + _EPS and self.r <= Lx + _EPS
        if not (self.r > 0 and ok):
            raise GeometryError(f"half disk of radius {self.r} at {self.center} exits the box")

    def area(self, Lx, Ly):
        return math.pi * self.r ** 2 / 2

    def size_for_area(self, a, Lx, Ly):
        return math.sqrt(2 * a / math.pi)

    def perimeter(self, Lx, Ly):
        return math.pi * self.r


@dataclass(frozen=True)
class Strip:
    """``(0, Lx) x (0, t)`` for ``axis="x"``; ``(0, t) x (0, Ly)`` for ``axis="y"``."""
    axis: str
    thickness: float
    kind = "strip"

    def level(self, X, Y):
        return Y if self.axis == "x" else X

    @property
    def size(self):
        return self.thickness

    def with_size(self, s):
        return Strip(self.axis, s)

    def check(self, Lx, Ly):
        if self.axis not in ("x", "y"):
            raise GeometryError(f"strip axis must be 'x' or 'y', got {self.axis!r}")
        L = Ly if self.axis == "x" else Lx
        if not 0 < self.thickness < L:
            raise GeometryError(f"strip thickness {self.thickness} outside (0, {L})")

    def area(self, Lx, Ly):
        return self.thickness * (Lx if self.axis == "x" else Ly)

    def size_for_area(self, a, Lx, Ly):
        return a / (Lx if self.axis == "x" else Ly)

    def perimeter(self, Lx, Ly):
        return Lx if self.axis == "x" else Ly


@dataclass(frozen=True)
class BallCap:
    """``B_r(center) ∩ box`` for a center on the box boundary (half or quarter disk)."""
    center: tuple[float, float]
    r: float
    kind = "ball-cap"

    def _as_simple(self, Lx, Ly):
        on_x, on_y = _edge_axis(self.center, Lx, Ly)
        if on_x and on_y:
            return QuarterDisk(self.center, self.r)
        return HalfDisk(self.center, self.r)

    def level(self, X, Y):
        return np.hypot(X - self.center[0], Y - self.center[1])

    @property
    def size(self):
        return self.r

    def with_size(self, s):
        return BallCap(self.center, s)

    def check(self, Lx, Ly):
        self._as_simple(Lx, Ly).check(Lx, Ly)

    def area(self, Lx, Ly):
        return self._as_simple(Lx, Ly).area(Lx, Ly)

    def size_for_area(self, a, Lx, Ly):
        return self._as_simple(Lx, Ly).size_for_area(a, Lx, Ly)

    def perimeter(self, Lx, Ly):
        return self._as_simple(Lx, Ly).perimeter(Lx, Ly)


@dataclass(frozen=True)
class FullDisk:
    center: tuple[float, float]
    r: float
    kind = "full-disk"

    def level(self, X, Y):
        return np.hypot(X - self.center[0], Y - self.center[1])

    @property
    def size(self):
        return self.r

    def with_size(self, s):
        return FullDisk(self.center, s)

    def check(self, Lx, Ly):
        cx, cy = self.center
        if not (self.r > 0 and min(cx, cy, Lx - cx, Ly - cy) >= self.r - _EPS):
            raise GeometryError(f"disk of radius {self.r} at {self.center} exits the box")

    def area(self, Lx, Ly):
        return math.pi * self.r ** 2

    def size_for_area(self, a, Lx, Ly):
        return math.sqrt(a / math.pi)

    def perimeter(self, Lx, Ly):
        return 2 * math.pi * self.r


ParametricShape = QuarterDisk | HalfDisk | Strip | BallCap | FullDisk


def rasterize(shape: ParametricShape, grid: Grid) -> DomainMask:
    """Cells whose centers lie in the open shape."""
    shape.check(grid.Lx, grid.Ly)
    X, Y = grid.centers()
    mask = DomainMask(grid, shape.level(X, Y) < shape.size)
    if mask.count == 0:
        raise GeometryError(f"{shape} covers no cell center at h={grid.h}")
    return mask


def mask_with_exact_volume(shape_family: ParametricShape, grid: Grid, delta: float) -> DomainMask:
    """Mask of the family with exactly ``round(delta / h**2)`` cells.

    The cells with the smallest level values are taken; ties (cells on the same
    level set) are broken in row-major order.  This is the limit of a bisection
    on the radius/thickness, without its jumps when several cells enter at once.
    """
    if not 0 < delta < grid.area:
        raise GeometryError(f"delta={delta} outside (0, {grid.area})")
    size = shape_family.size_for_area(delta, grid.Lx, grid.Ly)
    shape_family.with_size(size).check(grid.Lx, grid.Ly)
    k = int(round(delta / grid.cell_area))
    if k == 0:
        raise GeometryError(f"delta={delta} is below one cell at h={grid.h}")
    X, Y = grid.centers()
    level = shape_family.level(X, Y).ravel()
    # stable sort keeps row-major order among equal levels
    order = np.argsort(level, kind="stable")
    return DomainMask.from_flat_indices(grid, order[:k])


def exact_perimeter(shape: ParametricShape, Lx: float = 1.0, Ly: float = 1.0) -> float:
    """Analytic perimeter of the shape relative to the box ``(0, Lx) x (0, Ly)``."""
    shape.check(Lx, Ly)
    return shape.perimeter(Lx, Ly)


def relative_perimeter_grid(D: DomainMask) -> float:
    """``h`` times the number of in/out cell faces strictly inside the box (staircase length)."""
    c = D.cells
    faces = np.count_nonzero(c[:, 1:] != c[:, :-1]) + np.count_nonzero(c[1:, :] != c[:-1, :])
    return faces * D.grid.h


def boundary_contact_cells(D: DomainMask) -> int:
    """Number of mask cells having a face on the box boundary."""
    edge = np.zeros(D.grid.shape, dtype=bool)
    edge[0, :] = edge[-1, :] = True
    edge[:, 0] = edge[:, -1] = True
    return int(np.count_nonzero(D.cells & edge))


def lens_area(r: float, R: float) -> float:
    """Area of ``B_r(x0) ∩ B_R(0)`` for ``|x0| = R`` (two circular segments)."""
    if not 0 < r < 2 * R:
        raise GeometryError("lens_area needs 0 < r < 2R")
    d = R
    # half-angles subtended at each center
    a = math.acos((d * d + r * r - R * R) / (2 * d * r))
    b = math.acos((d * d + R * R - r * r) / (2 * d * R))
    return r * r * (a - math.sin(2 * a) / 2) + R * R * (b - math.sin(2 * b) / 2)

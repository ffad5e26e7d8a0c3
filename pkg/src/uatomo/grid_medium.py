"""Spatial grid, absorption/sound-speed maps, phantoms, and unit conversion.

Conventions used throughout the package:

* pixel index ``i`` runs along x (columns), ``j`` along y (rows);
* fields are stored as ``(Ly, Lx)`` arrays, row-major, so flat index
  ``j * Lx + i``;
* lengths are millimetres unless a name says otherwise; ``omega`` is rad/s
  and sound speed is m/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "Grid",
    "MediumMap",
    "RectanglePx",
    "PhantomSpec",
    "make_grid",
    "build_phantom",
    "tau_to_alpha",
    "alpha_to_tau",
]

#: dB per neper; 20·log10(e).
DB_PER_NEPER = 20.0 * math.log10(math.e)


@dataclass(frozen=True)
class Grid:
    """Rectangular pixel grid.

    ``origin`` is the physical (mm) coordinate of the *center* of pixel
    (0, 0); pixel (i, j) is centered at ``origin + (i*dx, j*dy)``.
    """

    Lx: int
    Ly: int
    dx: float
    dy: float
    origin: tuple[float, float]

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(Ly, Lx)`` of fields on this grid."""
        return (self.Ly, self.Lx)

    @property
    def n_pixels(self) -> int:
        return self.Lx * self.Ly

    @property
    def extent_mm(self) -> tuple[float, float]:
        """Physical extent ``(Lx*dx, Ly*dy)`` in mm."""
        return (self.Lx * self.dx, self.Ly * self.dy)

    def x_coords(self) -> np.ndarray:
        return self.origin[0] + self.dx * np.arange(self.Lx)

    def y_coords(self) -> np.ndarray:
        return self.origin[1] + self.dy * np.arange(self.Ly)

    def pixel_center(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin[0] + i * self.dx, self.origin[1] + j * self.dy)

    def contains_point(self, x: float, y: float) -> bool:
        """True if (x, y) mm lies within the cell-covered domain."""
        x0 = self.origin[0] - 0.5 * self.dx
        y0 = self.origin[1] - 0.5 * self.dy
        return (x0 <= x <= x0 + self.Lx * self.dx) and (
            y0 <= y <= y0 + self.Ly * self.dy
        )


def make_grid(
    Lx: int,
    Ly: int,
    dx: float,
    dy: float,
    origin: tuple[float, float] | None = None,
) -> Grid:
    """Create a grid; ``origin=None`` centers the domain on (0, 0) mm.

    Raises
    ------
    InvalidArgumentError
        If any pixel count is < 1 or any spacing is non-positive.
    """
    if int(Lx) != Lx or int(Ly) != Ly or Lx < 1 or Ly < 1:
        raise InvalidArgumentError(f"pixel counts must be >= 1, got {Lx}x{Ly}")
    if not (dx > 0 and dy > 0):
        raise InvalidArgumentError(f"spacings must be > 0, got dx={dx}, dy={dy}")
    if origin is None:
        origin = (-(Lx - 1) * dx / 2.0, -(Ly - 1) * dy / 2.0)
    return Grid(int(Lx), int(Ly), float(dx), float(dy), (float(origin[0]), float(origin[1])))


@dataclass(frozen=True)
class MediumMap:
    """Per-pixel dimensionless absorption ``tau`` and sound speed ``c`` (m/s)."""

    grid: Grid
    tau: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        if tau.shape != self.grid.shape or c.shape != self.grid.shape:
            raise InvalidArgumentError(
                f"field shapes {tau.shape}, {c.shape} do not match grid {self.grid.shape}"
            )
        if np.any(tau < 0):
            raise InvalidArgumentError("tau must be >= 0 everywhere")
        if np.any(c <= 0):
            raise InvalidArgumentError("c must be > 0 everywhere")
        tau.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "c", c)

    def is_constant(self) -> bool:
        """True when both fields are spatially constant."""
        return bool(
            np.all(self.tau == self.tau.flat[0]) and np.all(self.c == self.c.flat[0])
        )


@dataclass(frozen=True)
class RectanglePx:
    """Axis-aligned rectangle in pixel coordinates, inclusive on all sides."""

    i1: int
    i2: int
    j1: int
    j2: int

    def __post_init__(self):
        if self.i1 > self.i2 or self.j1 > self.j2:
            raise InvalidArgumentError(f"degenerate rectangle {self}")

    def within(self, grid: Grid) -> bool:
        return 0 <= self.i1 and self.i2 < grid.Lx and 0 <= self.j1 and self.j2 < grid.Ly


@dataclass(frozen=True)
class PhantomSpec:
    """Background absorption plus rectangular inclusions.

    Each inclusion is ``(RectanglePx, tau_value)``; membership is inclusive of
    the stated index ranges on every side.
    """

    background_tau: float
    inclusions: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.background_tau < 0:
            raise InvalidArgumentError("background tau must be >= 0")
        incs = []
        for rect, value in self.inclusions:
            if not isinstance(rect, RectanglePx):
                rect = RectanglePx(*rect)
            if value < 0:
                raise InvalidArgumentError(f"inclusion tau must be >= 0, got {value}")
            incs.append((rect, float(value)))
        object.__setattr__(self, "inclusions", tuple(incs))


def build_phantom(grid: Grid, spec: PhantomSpec, c_const: float) -> MediumMap:
    """Paint ``spec`` onto ``grid`` with a constant sound speed.

    Inclusion values override the background exactly (no boundary
    interpolation); later inclusions override earlier ones where they overlap.
    """
    if c_const <= 0:
        raise InvalidArgumentError(f"c_const must be > 0, got {c_const}")
    tau = np.full(grid.shape, float(spec.background_tau), dtype=np.float64)
    for rect, value in spec.inclusions:
        if not rect.within(grid):
            raise InvalidArgumentError(f"inclusion {rect} exceeds grid bounds {grid.shape}")
        tau[rect.j1 : rect.j2 + 1, rect.i1 : rect.i2 + 1] = value
    c = np.full(grid.shape, float(c_const), dtype=np.float64)
    return MediumMap(grid=grid, tau=tau, c=c)


def _check_positive(c, omega):
    if not np.all(np.asarray(c) > 0):
        raise InvalidArgumentError(f"c must be > 0, got {c}")
    if not np.all(np.asarray(omega) > 0):
        raise InvalidArgumentError(f"omega must be > 0, got {omega}")


def tau_to_alpha(tau, c, omega):
    """Convert dimensionless absorption to an attenuation coefficient in dB/cm.

    ``alpha = tau * (omega / c) * 20*log10(e) / 100``: the factor ``omega/c``
    turns tau into Np/m, ``20*log10(e)`` converts nepers to dB, and ``/100``
    converts per-metre to per-centimetre. Linear in ``tau``.
    """
    _check_positive(c, omega)
    return tau * (omega / c) * DB_PER_NEPER / 100.0


def alpha_to_tau(alpha, c, omega):
    """Exact inverse of :func:`tau_to_alpha` (alpha in dB/cm)."""
    _check_positive(c, omega)
    return alpha * (c / omega) * 100.0 / DB_PER_NEPER

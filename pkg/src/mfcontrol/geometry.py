"""Uniform Cartesian grids, cell-mass density fields, and tracer clouds.

All measure integrals in the toolkit are quadratures over one of two
objects defined here: a :class:`DensityField` (cell-integrated masses on a
uniform grid) or a :class:`LagrangianCloud` (weighted tracer nodes carrying
flow positions).  Both are immutable value objects.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError

FloatArray = NDArray[np.float64]

MASS_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid with square cells of side ``dx``."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    dx: float
    nx: int
    ny: int

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    @property
    def x_centers(self) -> FloatArray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y_centers(self) -> FloatArray:
        return self.y_min + (np.arange(self.ny) + 0.5) * self.dx

    @property
    def x_faces(self) -> FloatArray:
        """x-coordinates of the nx+1 vertical face planes."""
        return self.x_min + np.arange(self.nx + 1) * self.dx

    @property
    def y_faces(self) -> FloatArray:
        return self.y_min + np.arange(self.ny + 1) * self.dx

    def cell_centers(self) -> FloatArray:
        """All cell centers as an (nx*ny, 2) array, x-major order."""
        xc, yc = np.meshgrid(self.x_centers, self.y_centers, indexing="ij")
        return np.stack([xc.ravel(), yc.ravel()], axis=1)


def build_grid(x_min: float, x_max: float, y_min: float, y_max: float,
               dx: float) -> Grid:
    if dx <= 0:
        raise ConfigurationError(f"dx must be positive, got {dx}")
    if x_max <= x_min or y_max <= y_min:
        raise ConfigurationError("domain box must have positive extent")
    nx = _checked_cell_count(x_max - x_min, dx, "x")
    ny = _checked_cell_count(y_max - y_min, dx, "y")
    if nx < 2 or ny < 2:
        raise ConfigurationError("grid needs at least 2 cells per axis")
    return Grid(x_min, x_max, y_min, y_max, dx, nx, ny)


def _checked_cell_count(extent: float, dx: float, axis: str) -> int:
    n = round(extent / dx)
    if n < 1 or abs(n * dx - extent) > 1e-12 * max(extent, 1.0):
        raise ConfigurationError(
            f"{axis}-extent {extent} is not an integer multiple of dx={dx}"
        )
    return int(n)


@dataclass(frozen=True)
class DensityField:
    """Nonnegative per-cell masses on a grid, summing to one.

    ``mass[i, j]`` is the mass of the cell centered at
    ``(x_centers[i], y_centers[j])`` (cell-integrated, not a pointwise
    density; divide by the cell area for the latter).
    """

    grid: Grid
    mass: FloatArray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        if m.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(
                f"mass shape {m.shape} does not match grid "
                f"({self.grid.nx}, {self.grid.ny})"
            )
        if m.min(initial=0.0) < 0.0:
            raise ValueError("negative cell mass")
        total = float(m.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {total} deviates from 1 by more "
                             f"than {MASS_TOL}")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def center_of_mass(self) -> FloatArray:
        g = self.grid
        mx = float(self.mass.sum(axis=1) @ g.x_centers)
        my = float(self.mass.sum(axis=0) @ g.y_centers)
        return np.array([mx, my])


@dataclass(frozen=True)
class LagrangianCloud:
    """Weighted tracer nodes: current positions, initial origins, weights.

    The weights are a fixed quadrature for integrals against the initial
    measure; integrals against the transported measure use the same weights
    at the current positions (pushforward identity).
    """

    positions: FloatArray
    origins: FloatArray
    weights: FloatArray
    discarded_mass: float = 0.0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        org = np.atleast_2d(np.asarray(self.origins, dtype=np.float64))
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        n = len(w)
        if n < 1 or pos.shape != (n, 2) or org.shape != (n, 2):
            raise ValueError("positions, origins, weights must have matching "
                             "length >= 1")
        if w.min() < 0.0:
            raise ValueError("negative node weight")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise ValueError("node weights must sum to 1")
        for arr, name in ((pos, "positions"), (org, "origins"), (w, "weights")):
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite {name}")
            arr.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "origins", org)
        object.__setattr__(self, "weights", w)

    @property
    def n_nodes(self) -> int:
        return len(self.weights)

    def moved_to(self, new_positions: FloatArray) -> "LagrangianCloud":
        return LagrangianCloud(new_positions, self.origins, self.weights,
                               self.discarded_mass)


@dataclass(frozen=True)
class AgentState:
    """Positions of the M controlled agents."""

    y: FloatArray

    def __post_init__(self):
        y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if y.ndim != 2 or y.shape[1] != 2 or y.shape[0] < 1:
            raise ValueError("agent positions must have shape (M, 2), M >= 1")
        if not np.isfinite(y).all():
            raise ValueError("non-finite agent position")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def n_agents(self) -> int:
        return self.y.shape[0]


def truncated_gaussian_density(grid: Grid, std: float,
                               radius: float) -> DensityField:
    """Gaussian cell-mass profile truncated to the ball of given radius.

    Mass is proportional to exp(-|x_c|^2 / (2 std^2)) at cell centers inside
    the ball and zero outside, normalized to total mass one.
    """
    if std <= 0 or radius <= 0:
        raise ConfigurationError("std and radius must be positive")
    if (radius > max(abs(grid.x_min), abs(grid.x_max)) or
            radius > max(abs(grid.y_min), abs(grid.y_max))):
        raise ConfigurationError("truncation ball exceeds the grid box")
    xc = grid.x_centers[:, None]
    yc = grid.y_centers[None, :]
    r2 = xc * xc + yc * yc
    m = np.where(r2 <= radius * radius,
                 np.exp(-r2 / (2.0 * std * std)), 0.0)
    total = m.sum()
    if total <= 0.0:
        raise ConfigurationError(
            "truncation radius smaller than one cell: no mass left"
        )
    return DensityField(grid, m / total)


def extract_cloud(density: DensityField,
                  mass_threshold: float = 0.0) -> LagrangianCloud:
    """One tracer node per cell with mass above the threshold.

    Nodes sit at the cell centers with the cell masses as weights,
    renormalized to sum to one; the discarded mass is recorded on the cloud.
    """
    m = density.mass
    if not 0.0 <= mass_threshold < m.max():
        raise ConfigurationError(
            f"mass_threshold {mass_threshold} not in [0, max cell mass)"
        )
    keep = m > mass_threshold
    idx_x, idx_y = np.nonzero(keep)
    g = density.grid
    pts = np.stack([g.x_centers[idx_x], g.y_centers[idx_y]], axis=1)
    w = m[keep]
    kept = w.sum()
    return LagrangianCloud(pts, pts.copy(), w / kept,
                           discarded_mass=float(1.0 - kept))


def support_radius(density: DensityField) -> float:
    """Largest cell-center norm over cells carrying positive mass."""
    g = density.grid
    xc = g.x_centers[:, None]
    yc = g.y_centers[None, :]
    r = np.sqrt(xc * xc + yc * yc)
    pos = density.mass > 0.0
    if not pos.any():
        return 0.0
    return float(r[pos].max())

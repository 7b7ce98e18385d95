"""Terminal transport cost to a two-atom target.

For two equal-mass atoms the optimal-transport map is a half-space
assignment: the plane orthogonal to the atom axis that splits the source
into halves of equal mass.  The plane is located by bisection on the
cell-center mass profile; a brute-force discrete solver over exact
rational masses serves as the independent test oracle.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import lcm

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError
from .geometry import DensityField

FloatArray = NDArray[np.float64]

BISECTION_REL_TOL = 1e-9


@dataclass(frozen=True)
class TargetMeasure:
    """Two distinct atoms, each carrying half the mass."""

    atoms: FloatArray  # (2, 2)

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=np.float64)
        if a.shape != (2, 2):
            raise ConfigurationError(
                "target must have exactly 2 atoms in the plane"
            )
        if np.linalg.norm(a[1] - a[0]) == 0.0:
            raise ConfigurationError("target atoms must be distinct")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)


@dataclass(frozen=True)
class SplitPlane:
    """Plane normal . x = offset separating the two transport cells."""

    normal: FloatArray  # unit vector along atoms[1] - atoms[0]
    offset: float
    mass_left: float    # achieved mass on the side normal . x < offset
    imbalance: float    # |mass_left - 1/2|


def _projections(density: DensityField, normal: FloatArray) -> tuple[
        FloatArray, FloatArray]:
    """Cell-center projections onto the normal and the matching masses,
    flattened."""
    g = density.grid
    s = normal[0] * g.x_centers[:, None] + normal[1] * g.y_centers[None, :]
    return s.ravel(), density.mass.ravel()


def bisect_split(density: DensityField, target: TargetMeasure) -> SplitPlane:
    """Locate the equal-mass split plane orthogonal to the atom axis.

    Cells are classified by center, so the achievable left mass is a step
    function of the offset; bisection brackets the half-mass level from
    both sides and the offset lands mid-plateau (or at the jump whose
    achieved mass is closest to one half).
    """
    axis = target.atoms[1] - target.atoms[0]
    normal = axis / np.linalg.norm(axis)
    s, m = _projections(density, normal)

    def mass_left(b: float) -> float:
        return float(m[s < b].sum())

    tol = BISECTION_REL_TOL * density.grid.dx
    lo0, hi0 = float(s.min()) - density.grid.dx, float(s.max()) + density.grid.dx

    def lower_bisect(strict: bool) -> float:
        # infimum of b with mass_left(b) >= 1/2 (or > 1/2 when strict)
        lo, hi = lo0, hi0
        while hi - lo >= tol:
            mid = 0.5 * (lo + hi)
            ml = mass_left(mid)
            if (ml > 0.5) if strict else (ml >= 0.5):
                hi = mid
            else:
                lo = mid
        return hi

    b1 = lower_bisect(strict=False)
    b2 = lower_bisect(strict=True)
    offset = 0.5 * (b1 + b2)
    achieved = mass_left(offset)

    if b2 - b1 < 2.0 * tol:
        # Jump: both brackets collapsed onto one projection value; include
        # the jumping row instead if that lands closer to one half.
        including = float(m[s < offset + tol].sum() if tol > 0 else achieved)
        row_above = s[s > offset + tol]
        if abs(including - 0.5) < abs(achieved - 0.5):
            nxt = float(row_above.min()) if row_above.size else offset + \
                density.grid.dx
            offset = 0.5 * (offset + nxt)
            achieved = mass_left(offset)

    return SplitPlane(normal, float(offset), achieved,
                      abs(achieved - 0.5))


def assign_side(point, split_plane: SplitPlane) -> int:
    """1 for the first atom's half-space, 2 otherwise (ties to 2)."""
    p = np.asarray(point, dtype=np.float64)
    return 1 if float(split_plane.normal @ p) < split_plane.offset else 2


def assign_sides(points: FloatArray, split_plane: SplitPlane) -> FloatArray:
    """Vectorized :func:`assign_side`."""
    s = points @ split_plane.normal
    return np.where(s < split_plane.offset, 1, 2)


def terminal_cost(density: DensityField, target: TargetMeasure) -> float:
    """Half the squared transport cost of the cell-center discretization
    to the two atoms under the bisected split."""
    plane = bisect_split(density, target)
    return terminal_cost_with_plane(density, target, plane)


def terminal_cost_with_plane(density: DensityField, target: TargetMeasure,
                             plane: SplitPlane) -> float:
    g = density.grid
    pts = g.cell_centers()
    side = assign_sides(pts, plane)
    z = np.where(side[:, None] == 1, target.atoms[0], target.atoms[1])
    d2 = np.sum((pts - z) ** 2, axis=1)
    return 0.5 * float(density.mass.ravel() @ d2)


def terminal_cost_cloud(cloud, target: TargetMeasure,
                        plane: SplitPlane) -> float:
    """Half the squared transport cost of a weighted node cloud under the
    given split; this is the Lagrangian quadrature of the terminal cost and
    the exact functional the costate solve differentiates."""
    pos = cloud.positions
    side = assign_sides(pos, plane)
    z = np.where(side[:, None] == 1, target.atoms[0], target.atoms[1])
    return 0.5 * float(cloud.weights @ np.sum((pos - z) ** 2, axis=1))


def assign_particles_two_atoms(points: FloatArray,
                               target: TargetMeasure) -> FloatArray:
    """Balanced assignment of equal-weight particles to the two atoms.

    The floor(N/2) particles that most prefer the first atom (smallest
    difference of squared distances) go to it, the rest to the second;
    ties break by particle index.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d1 = np.sum((pts - target.atoms[0]) ** 2, axis=1)
    d2 = np.sum((pts - target.atoms[1]) ** 2, axis=1)
    order = np.argsort(d1 - d2, kind="stable")
    out = np.full(len(pts), 2, dtype=np.int64)
    out[order[:len(pts) // 2]] = 1
    return out


def particle_assignment_cost(points: FloatArray,
                             target: TargetMeasure) -> float:
    """Half the mean squared distance under the balanced assignment."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    side = assign_particles_two_atoms(pts, target)
    z = np.where(side[:, None] == 1, target.atoms[0], target.atoms[1])
    return 0.5 * float(np.mean(np.sum((pts - z) ** 2, axis=1)))


# ---------------------------------------------------------------------------
# Brute-force discrete transport oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteMeasure:
    """Small weighted point set with exactly rational weights."""

    points: FloatArray
    weights: FloatArray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if p.shape[0] != w.shape[0] or p.shape[1] != 2:
            raise ConfigurationError("points (n, 2) and weights (n,) required")
        if w.min() <= 0 or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError("weights must be positive and sum to 1")
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)


MAX_SOURCE_POINTS = 8
MAX_TARGET_POINTS = 4
MAX_COMMON_DENOMINATOR = 64


def _integer_masses(measure: DiscreteMeasure) -> tuple[list[int], int]:
    fracs = [Fraction(float(w)).limit_denominator(MAX_COMMON_DENOMINATOR)
             for w in measure.weights]
    if any(abs(float(f) - float(w)) > 1e-12
           for f, w in zip(fracs, measure.weights)):
        raise ConfigurationError(
            f"weights are not on a rational grid with denominator <= "
            f"{MAX_COMMON_DENOMINATOR}"
        )
    den = lcm(*[f.denominator for f in fracs])
    units = [int(f * den) for f in fracs]
    if sum(units) != den:
        raise ConfigurationError("rational weights do not sum to 1 exactly")
    return units, den


def brute_force_transport(source: DiscreteMeasure,
                          target: DiscreteMeasure) -> float:
    """Exact minimum of the squared-distance coupling cost.

    Masses are scaled to a common integer denominator and the optimum is
    found by exhaustive dynamic programming over integer transport plans,
    which visits every vertex of the transportation polytope.
    """
    if len(source.weights) > MAX_SOURCE_POINTS:
        raise ConfigurationError(
            f"source support larger than {MAX_SOURCE_POINTS} points"
        )
    if len(target.weights) > MAX_TARGET_POINTS:
        raise ConfigurationError(
            f"target support larger than {MAX_TARGET_POINTS} points"
        )
    r_units, r_den = _integer_masses(source)
    c_units, c_den = _integer_masses(target)
    den = lcm(r_den, c_den)
    rows = [u * (den // r_den) for u in r_units]
    cols = tuple(u * (den // c_den) for u in c_units)
    cost = np.sum(
        (source.points[:, None, :] - target.points[None, :, :]) ** 2, axis=2
    )

    @lru_cache(maxsize=None)
    def best(i: int, caps: tuple[int, ...]) -> float:
        if i == len(rows):
            return 0.0
        out = np.inf
        for alloc in _compositions(rows[i], caps):
            here = sum(a * cost[i, j] for j, a in enumerate(alloc) if a)
            rest = best(i + 1, tuple(c - a for c, a in zip(caps, alloc)))
            out = min(out, here + rest)
        return out

    try:
        return best(0, cols) / den
    finally:
        best.cache_clear()


def _compositions(total: int, caps: tuple[int, ...]):
    """All splittings of ``total`` units into bins bounded by ``caps``."""
    if len(caps) == 1:
        if total <= caps[0]:
            yield (total,)
        return
    for first in range(min(total, caps[0]) + 1):
        for rest in _compositions(total - first, caps[1:]):
            yield (first,) + rest

"""Dyadic grid combinatorics on a bounded window.

Cubes are half-open boxes indexed by (level, integer coords). Level k tiles
the window with 2**(n*k) congruent cubes; children split a cube once per
axis. All geometry here is measure-free; masses live in `measure`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class MeshExhaustedError(ValueError):
    """Raised when a construction needs cells below the finest mesh level."""


def _default_max_level(dimension: int) -> int:
    return 10 if dimension == 1 else 5


@dataclass(frozen=True)
class Grid:
    """Bounded dyadic grid: a window cube plus a finite refinement depth.

    The window is [origin + shift, origin + shift + side) per axis; `shift`
    translates the whole grid so that sweeps over translated grids can reuse
    generator parameters given in absolute coordinates.
    """

    dimension: int = 1
    origin: tuple | None = None
    side: float = 1.0
    shift: tuple | None = None
    max_level: int | None = None

    def __post_init__(self):
        n = self.dimension
        if n < 1:
            raise ValueError(f"dimension must be >= 1, got {n}")
        origin = self.origin
        origin = (0.0,) * n if origin is None else tuple(float(v) for v in origin)
        if len(origin) != n:
            raise ValueError(f"origin must have {n} entries, got {len(origin)}")
        shift = self.shift
        shift = (0.0,) * n if shift is None else tuple(float(v) for v in shift)
        if len(shift) != n:
            raise ValueError(f"shift must have {n} entries, got {len(shift)}")
        if not self.side > 0:
            raise ValueError("window side must be positive")
        level = self.max_level if self.max_level is not None else _default_max_level(n)
        if level < 1:
            raise ValueError("max_level must be >= 1")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "side", float(self.side))
        object.__setattr__(self, "max_level", int(level))

    @cached_property
    def window_lower(self) -> np.ndarray:
        return np.array(self.origin) + np.array(self.shift)

    @cached_property
    def window_upper(self) -> np.ndarray:
        return self.window_lower + self.side

    @property
    def cells_per_axis(self) -> int:
        return 2 ** self.max_level

    @cached_property
    def mesh_shape(self) -> tuple:
        return (self.cells_per_axis,) * self.dimension

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis ** self.dimension

    @property
    def cell_side(self) -> float:
        return self.side / self.cells_per_axis

    @property
    def cell_diameter(self) -> float:
        return self.cell_side * np.sqrt(self.dimension)

    @cached_property
    def cell_volume(self) -> float:
        return self.cell_side ** self.dimension

    @cached_property
    def flat_centers(self) -> np.ndarray:
        """Cell centers as an (n_cells, dimension) array in C order."""
        axes = [
            self.window_lower[i] + (np.arange(self.cells_per_axis) + 0.5) * self.cell_side
            for i in range(self.dimension)
        ]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def root(self) -> "DyadicCube":
        return DyadicCube(self, 0, (0,) * self.dimension)

    def cube(self, level: int, coords) -> "DyadicCube":
        return DyadicCube(self, level, tuple(int(c) for c in coords))

    def cubes_at_level(self, level: int):
        """All level-`level` cubes in lexicographic coordinate order."""
        if level < 0 or level > self.max_level:
            raise ValueError(f"level {level} outside [0, {self.max_level}]")
        for coords in itertools.product(range(2 ** level), repeat=self.dimension):
            yield DyadicCube(self, level, coords)

    def axis_fractions(self, lo: float, hi: float, axis: int = 0) -> np.ndarray:
        """Per-cell overlap fraction of [lo, hi) along one axis."""
        base = self.window_lower[axis]
        edges = base + np.arange(self.cells_per_axis + 1) * self.cell_side
        left = np.maximum(edges[:-1], lo)
        right = np.minimum(edges[1:], hi)
        return np.clip((right - left) / self.cell_side, 0.0, 1.0)

    def box_fractions(self, lower, upper) -> tuple[np.ndarray, bool]:
        """Mesh array of per-cell coverage fractions of an axis-parallel box.

        Returns (fractions, clipped); `clipped` is True when the box extends
        beyond the window, in which case only the in-window part is counted.
        """
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        clipped = bool(
            np.any(lower < self.window_lower - 1e-12 * self.side)
            or np.any(upper > self.window_upper + 1e-12 * self.side)
        )
        per_axis = [
            self.axis_fractions(lower[i], upper[i], axis=i) for i in range(self.dimension)
        ]
        frac = per_axis[0]
        for v in per_axis[1:]:
            frac = np.multiply.outer(frac, v)
        return frac, clipped


@dataclass(frozen=True)
class DyadicCube:
    grid: Grid
    level: int
    coords: tuple

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))
        if not 0 <= self.level <= self.grid.max_level:
            raise ValueError(f"level {self.level} outside [0, {self.grid.max_level}]")
        if len(self.coords) != self.grid.dimension:
            raise ValueError("coords/dimension mismatch")
        top = 2 ** self.level
        if any(not 0 <= c < top for c in self.coords):
            raise ValueError(f"coords {self.coords} outside [0, {top}) at level {self.level}")

    # -- geometry ----------------------------------------------------------
    @property
    def side(self) -> float:
        return self.grid.side / 2 ** self.level

    @property
    def volume(self) -> float:
        return self.side ** self.grid.dimension

    @property
    def lower(self) -> np.ndarray:
        return self.grid.window_lower + np.array(self.coords) * self.side

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.side

    @property
    def center(self) -> np.ndarray:
        return self.lower + 0.5 * self.side

    def triple_box(self) -> tuple[np.ndarray, np.ndarray]:
        """The concentric dilate 3Q as (lower, upper), not clipped."""
        return self.lower - self.side, self.upper + self.side

    def dilate_box(self, factor: float) -> tuple[np.ndarray, np.ndarray]:
        half = 0.5 * factor * self.side
        return self.center - half, self.center + half

    # -- tree structure ----------------------------------------------------
    def parent(self) -> "DyadicCube":
        if self.level == 0:
            raise ValueError("window cube has no parent")
        return DyadicCube(self.grid, self.level - 1, tuple(c // 2 for c in self.coords))

    def children(self) -> list:
        """The 2**n children in lexicographic offset order."""
        if self.level >= self.grid.max_level:
            raise MeshExhaustedError(
                f"mesh exhausted: cube at level {self.level} has no children "
                f"(max_level={self.grid.max_level})"
            )
        out = []
        for off in itertools.product((0, 1), repeat=self.grid.dimension):
            out.append(
                DyadicCube(
                    self.grid,
                    self.level + 1,
                    tuple(2 * c + o for c, o in zip(self.coords, off)),
                )
            )
        return out

    def grandchildren(self, m: int, cumulative: bool = False) -> list:
        """Descendants m levels down; with cumulative=True, levels 1..m."""
        if m < 1:
            raise ValueError("m must be >= 1")
        if self.level + m > self.grid.max_level:
            raise MeshExhaustedError(
                f"mesh exhausted: level {self.level + m} exceeds max_level "
                f"{self.grid.max_level}"
            )
        out = []
        frontier = [self]
        for _ in range(m):
            frontier = [c for q in frontier for c in q.children()]
            if cumulative:
                out.extend(frontier)
        return out if cumulative else frontier

    def contains(self, other: "DyadicCube") -> bool:
        if other.level < self.level:
            return False
        shiftv = other.level - self.level
        return all(oc >> shiftv == c for oc, c in zip(other.coords, self.coords))

    def contains_point(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x >= self.lower) and np.all(x < self.upper))

    # -- mesh access -------------------------------------------------------
    def slices(self) -> tuple:
        w = 2 ** (self.grid.max_level - self.level)
        return tuple(slice(c * w, (c + 1) * w) for c in self.coords)

    def indicator(self) -> np.ndarray:
        out = np.zeros(self.grid.mesh_shape)
        out[self.slices()] = 1.0
        return out

    # -- serialization -----------------------------------------------------
    def key(self) -> str:
        return f"{self.level}:{','.join(str(c) for c in self.coords)}"

    @staticmethod
    def from_key(grid: Grid, key: str) -> "DyadicCube":
        level_str, _, coord_str = key.partition(":")
        return DyadicCube(grid, int(level_str), tuple(int(c) for c in coord_str.split(",")))


@dataclass(frozen=True)
class GeometryReport:
    distance: float
    triple_overlap: bool
    first_contains_second: bool
    second_contains_first: bool
    triple_clipped: bool


def _box_gap(lo1, hi1, lo2, hi2) -> float:
    gap = np.maximum(0.0, np.maximum(lo2 - hi1, lo1 - hi2))
    return float(np.linalg.norm(gap))


def box_distance(lo1, hi1, lo2, hi2) -> float:
    """Euclidean distance between the closures of two boxes."""
    return _box_gap(np.asarray(lo1), np.asarray(hi1), np.asarray(lo2), np.asarray(hi2))


def geometry(q1: DyadicCube, q2: DyadicCube) -> GeometryReport:
    """Pairwise geometry of two cubes on the same grid."""
    if q1.grid != q2.grid:
        raise ValueError("cubes live on different grids")
    dist = _box_gap(q1.lower, q1.upper, q2.lower, q2.upper)
    t1_lo, t1_hi = q1.triple_box()
    t2_lo, t2_hi = q2.triple_box()
    overlap = bool(np.all(np.maximum(t1_lo, t2_lo) < np.minimum(t1_hi, t2_hi)))
    g = q1.grid
    clipped = bool(
        np.any(t1_lo < g.window_lower) or np.any(t1_hi > g.window_upper)
        or np.any(t2_lo < g.window_lower) or np.any(t2_hi > g.window_upper)
    )
    return GeometryReport(
        distance=dist,
        triple_overlap=overlap,
        first_contains_second=q1.contains(q2),
        second_contains_first=q2.contains(q1),
        triple_clipped=clipped,
    )

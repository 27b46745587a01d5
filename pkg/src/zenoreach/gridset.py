"""Grid-quantized closed subsets of a compact axis-aligned box.

A ``Grid`` chops a box into closed cells (adjacent cells share faces); a
``GridSet`` is a boolean occupancy mask over those cells and denotes the
union of its occupied cells, which is closed by construction.  All set
algebra, fattening, interior tests and the Hausdorff metric used by the
analyses live here.

Conventions fixed once for the whole package:

* metric is the max norm, so fattening by ``delta`` is a per-dimension
  dilation;
* empty mask denotes the empty set (top element in reverse inclusion),
  full mask denotes the whole box (bottom element);
* rasterization counts positive-measure overlap only: a box touching a
  cell exactly on a shared face does not occupy that cell, and a
  degenerate (point-like) coordinate is assigned by floor indexing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

# Relative tolerance used to snap near-face coordinates onto cell faces so
# float noise cannot flip the face-touching convention.
_SNAP = 1e-9

DISJOINT = -1
INTERSECTS = 0
CONTAINS = 1


class GridMismatch(Exception):
    """Two grid sets live on different grids."""


class EmptyMismatch(Exception):
    """Hausdorff distance requested between an empty and a nonempty set."""


def _snap_units(u: float) -> float:
    r = round(u)
    if abs(u - r) <= _SNAP * max(1.0, abs(u)):
        return float(r)
    return u


@dataclass(frozen=True)
class Grid:
    """Uniform grid over a compact box: per-dimension bounds and cell counts."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    res: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lo) == len(self.hi) == len(self.res)):
            raise ValueError("lo, hi, res must have the same length")
        for a, b in zip(self.lo, self.hi):
            if not b > a:
                raise ValueError(f"degenerate box: [{a}, {b}]")
        for r in self.res:
            if r < 1:
                raise ValueError("resolution must be >= 1 in every dimension")

    @property
    def dim(self) -> int:
        return len(self.res)

    @property
    def widths(self) -> tuple[float, ...]:
        return tuple((b - a) / r for a, b, r in zip(self.lo, self.hi, self.res))

    @property
    def max_width(self) -> float:
        return max(self.widths)

    @property
    def min_width(self) -> float:
        return min(self.widths)

    def cell_box(self, idx: Sequence[int]) -> tuple[tuple[float, ...], tuple[float, ...]]:
        w = self.widths
        lo = tuple(a + i * wi for a, i, wi in zip(self.lo, idx, w))
        hi = tuple(a + (i + 1) * wi for a, i, wi in zip(self.lo, idx, w))
        return lo, hi

    def index_of(self, point: Sequence[float]) -> tuple[int, ...] | None:
        """Cell index of a point by floor convention; None when outside the box."""
        out = []
        for x, a, wi, r in zip(point, self.lo, self.widths, self.res):
            u = _snap_units((x - a) / wi)
            if u < 0 or u > r:
                return None
            out.append(min(int(math.floor(u)), r - 1))
        return tuple(out)

    def index_range(self, lo: Sequence[float], hi: Sequence[float]) -> tuple[tuple[int, int], ...] | None:
        """Inclusive per-dimension index ranges of cells meeting the box [lo, hi].

        Positive-measure overlap is required along non-degenerate dimensions;
        a degenerate dimension (lo == hi) picks the floor cell.  Returns None
        when the box misses the grid box entirely.
        """
        out = []
        for a, b, g0, wi, r in zip(lo, hi, self.lo, self.widths, self.res):
            if b < a:
                return None
            ua = _snap_units((a - g0) / wi)
            ub = _snap_units((b - g0) / wi)
            if ub < 0 or ua > r:
                return None
            if ua == ub:
                i0 = i1 = min(int(math.floor(ua)), r - 1)
            else:
                i0 = int(ua) if float(ua).is_integer() else int(math.floor(ua))
                i1 = int(ub) - 1 if float(ub).is_integer() else int(math.floor(ub))
            i0 = max(i0, 0)
            i1 = min(i1, r - 1)
            if i1 < i0:
                return None
            out.append((i0, i1))
        return tuple(out)

    def centers(self, indices: np.ndarray) -> np.ndarray:
        """Cell centers for an (N, dim) integer index array."""
        w = np.asarray(self.widths)
        return np.asarray(self.lo) + (indices + 0.5) * w


class GridSet:
    """Occupancy mask over a grid; immutable; denotes the union of occupied cells."""

    __slots__ = ("grid", "mask")

    def __init__(self, grid: Grid, mask: np.ndarray):
        mask = np.ascontiguousarray(mask, dtype=bool)
        if mask.shape != tuple(grid.res):
            raise ValueError(f"mask shape {mask.shape} != grid resolution {grid.res}")
        mask.setflags(write=False)
        self.grid = grid
        self.mask = mask

    # -- constructors ------------------------------------------------------

    @classmethod
    def empty(cls, grid: Grid) -> "GridSet":
        return cls(grid, np.zeros(grid.res, dtype=bool))

    @classmethod
    def full(cls, grid: Grid) -> "GridSet":
        return cls(grid, np.ones(grid.res, dtype=bool))

    @classmethod
    def from_boxes(cls, grid: Grid, boxes: Iterable[tuple[Sequence[float], Sequence[float]]]) -> "GridSet":
        mask = np.zeros(grid.res, dtype=bool)
        for lo, hi in boxes:
            rng = grid.index_range(lo, hi)
            if rng is None:
                continue
            mask[tuple(slice(i0, i1 + 1) for i0, i1 in rng)] = True
        return cls(grid, mask)

    @classmethod
    def from_points(cls, grid: Grid, points: Iterable[Sequence[float]]) -> "GridSet":
        mask = np.zeros(grid.res, dtype=bool)
        for p in points:
            idx = grid.index_of(p)
            if idx is not None:
                mask[idx] = True
        return cls(grid, mask)

    # -- basic queries ------------------------------------------------------

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    def occupied_indices(self) -> np.ndarray:
        return np.argwhere(self.mask)

    def contains_point(self, point: Sequence[float]) -> bool:
        idx = self.grid.index_of(point)
        return idx is not None and bool(self.mask[idx])

    def contains_cell(self, idx: Sequence[int]) -> bool:
        return bool(self.mask[tuple(idx)])

    # -- set algebra (mask level; matches denoted-set algebra) --------------

    def _check(self, other: "GridSet") -> None:
        if self.grid != other.grid:
            raise GridMismatch("operands live on different grids")

    def __or__(self, other: "GridSet") -> "GridSet":
        self._check(other)
        return GridSet(self.grid, self.mask | other.mask)

    def __and__(self, other: "GridSet") -> "GridSet":
        self._check(other)
        return GridSet(self.grid, self.mask & other.mask)

    def __sub__(self, other: "GridSet") -> "GridSet":
        self._check(other)
        return GridSet(self.grid, self.mask & ~other.mask)

    def __le__(self, other: "GridSet") -> bool:
        self._check(other)
        return bool(np.all(~self.mask | other.mask))

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridSet):
            return NotImplemented
        return self.grid == other.grid and bool(np.array_equal(self.mask, other.mask))

    def __hash__(self):
        return hash((self.grid, self.mask.tobytes()))

    # -- morphology ----------------------------------------------------------

    def dilate(self, cells: int | Sequence[int] = 1) -> "GridSet":
        """Axis-aligned dilation by the given number of cells per dimension."""
        if self.is_empty:
            return self
        ks = [cells] * self.grid.dim if isinstance(cells, int) else list(cells)
        if all(k == 0 for k in ks):
            return self
        structure = np.ones(tuple(2 * k + 1 for k in ks), dtype=bool)
        return GridSet(self.grid, ndimage.binary_dilation(self.mask, structure=structure))

    def interior(self) -> "GridSet":
        """Cells all of whose axis neighbors inside the box are occupied.

        Relative interior at one-cell granularity: box-boundary cells count
        their missing outside neighbors as occupied.
        """
        structure = ndimage.generate_binary_structure(self.grid.dim, 1)
        return GridSet(self.grid, ndimage.binary_erosion(self.mask, structure=structure, border_value=1))

    def project_out(self, axis: int) -> "GridSet":
        """Project the denoted set along one axis (existential over that axis)."""
        g = self.grid
        keep = [d for d in range(g.dim) if d != axis]
        sub = Grid(
            tuple(g.lo[d] for d in keep),
            tuple(g.hi[d] for d in keep),
            tuple(g.res[d] for d in keep),
        )
        return GridSet(sub, self.mask.any(axis=axis))


# -- regions and rasterization ------------------------------------------------


class Region:
    """Conservative classifier of axis boxes against a region of the state box.

    ``classify(lo, hi)`` returns DISJOINT, INTERSECTS or CONTAINS (the cell is
    contained in the region).  Implementations may return INTERSECTS whenever
    unsure but must never wrongly claim DISJOINT or CONTAINS.
    """

    def classify(self, lo: Sequence[float], hi: Sequence[float]) -> int:
        raise NotImplementedError


class FuncRegion(Region):
    def __init__(self, fn: Callable[[Sequence[float], Sequence[float]], int]):
        self.fn = fn

    def classify(self, lo, hi):
        return self.fn(lo, hi)


class BoxRegion(Region):
    """A single closed axis box; positive-measure overlap convention."""

    def __init__(self, lo: Sequence[float], hi: Sequence[float]):
        self.lo = tuple(lo)
        self.hi = tuple(hi)

    def classify(self, lo, hi):
        inside = True
        for a, b, ra, rb in zip(lo, hi, self.lo, self.hi):
            wa, wb = max(a, ra), min(b, rb)
            if wb < wa:
                return DISJOINT
            if ra == rb or a == b:
                # degenerate slab or cell: containment only if aligned
                if not (ra <= a and b <= rb):
                    inside = False
                continue
            if wb <= wa:  # face touch only
                return DISJOINT
            if not (ra <= a and b <= rb):
                inside = False
        return CONTAINS if inside else INTERSECTS


class IntervalUnionRegion(Region):
    """1-D union of non-degenerate intervals with open/closed end flags.

    Use PointsRegion for isolated points; a cell counts as met only on
    positive-length overlap.
    """

    def __init__(self, intervals: Iterable[tuple[float, float, bool, bool]]):
        # entries are (a, b, closed_lo, closed_hi) with a < b
        self.intervals = [tuple(iv) for iv in intervals]
        for p, q, _, _ in self.intervals:
            if not q > p:
                raise ValueError("intervals must be non-degenerate; use PointsRegion for points")

    def classify(self, lo, hi):
        (a,), (b,) = lo, hi
        hit = False
        for p, q, cl, ch in self.intervals:
            if min(b, q) > max(a, p):
                hit = True
                if p <= a and b <= q and (cl or a > p) and (ch or b < q):
                    return CONTAINS
        return INTERSECTS if hit else DISJOINT


class PointsRegion(Region):
    """A finite set of points; a cell meets the region when it holds a point
    under the floor-indexing convention."""

    def __init__(self, grid: Grid, points: Iterable[Sequence[float]]):
        self.cells = set()
        for p in points:
            idx = grid.index_of(p)
            if idx is not None:
                self.cells.add(idx)
        self.grid = grid

    def classify(self, lo, hi):
        idx = self.grid.index_of(tuple((a + b) / 2 for a, b in zip(lo, hi)))
        return INTERSECTS if idx in self.cells else DISJOINT


class EmptyRegion(Region):
    def classify(self, lo, hi):
        return DISJOINT


class FullRegion(Region):
    def classify(self, lo, hi):
        return CONTAINS


class UnionRegion(Region):
    def __init__(self, parts: Iterable[Region]):
        self.parts = list(parts)

    def classify(self, lo, hi):
        best = DISJOINT
        for p in self.parts:
            c = p.classify(lo, hi)
            if c == CONTAINS:
                return CONTAINS
            best = max(best, c)
        return best


def rasterize(region: Region, grid: Grid, mode: str = "outer") -> GridSet:
    """Rasterize a region: ``outer`` keeps every cell the region meets,
    ``inner`` keeps only cells entirely contained in the region."""
    if mode not in ("outer", "inner"):
        raise ValueError(f"unknown mode {mode!r}")
    mask = np.zeros(grid.res, dtype=bool)
    want = CONTAINS if mode == "inner" else INTERSECTS
    for idx in np.ndindex(*grid.res):
        lo, hi = grid.cell_box(idx)
        c = region.classify(lo, hi)
        if c >= want:
            mask[idx] = True
    return GridSet(grid, mask)


# -- fattening, way-below, Hausdorff -----------------------------------------


def fatten(s: GridSet, delta: float) -> GridSet:
    """Outer rasterization of the closed delta-neighborhood of s (max norm).

    Realized as a per-dimension dilation by ceil(delta / width) cells, so
    fatten(s, 0) == s and exact multiples of the cell width dilate by
    exactly that many cells.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if s.is_empty or delta == 0:
        return s
    ks = [int(math.ceil(_snap_units(delta / w))) for w in s.grid.widths]
    return s.dilate(ks)


def way_below(a: GridSet, b: GridSet) -> bool:
    """Reverse-inclusion way-below test: b together with its in-box axis
    neighbors must lie inside a (grid surrogate of b in the interior of a)."""
    if a.grid != b.grid:
        raise GridMismatch("way_below operands on different grids")
    return b <= a.interior()


def hausdorff(a: GridSet, b: GridSet) -> float:
    """Symmetric Hausdorff distance between the denoted sets, max norm.

    Computed on occupied cell centers, hence accurate to half a cell width
    per operand.  Both empty gives 0; exactly one empty raises EmptyMismatch.
    """
    if a.grid != b.grid:
        raise GridMismatch("hausdorff operands on different grids")
    ea, eb = a.is_empty, b.is_empty
    if ea and eb:
        return 0.0
    if ea != eb:
        raise EmptyMismatch("Hausdorff undefined between empty and nonempty sets")
    pa = a.grid.centers(a.occupied_indices())
    pb = b.grid.centers(b.occupied_indices())
    d_ab = cKDTree(pb).query(pa, p=np.inf)[0].max()
    d_ba = cKDTree(pa).query(pb, p=np.inf)[0].max()
    return float(max(d_ab, d_ba))


# -- CSV interchange -----------------------------------------------------------


def write_csv(s: GridSet, path) -> None:
    """One row per occupied cell: per-dimension index, then lo/hi per dimension."""
    g = s.grid
    n = g.dim
    header = [f"i{d}" for d in range(n)]
    for d in range(n):
        header += [f"lo{d}", f"hi{d}"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for idx in s.occupied_indices():
            lo, hi = g.cell_box(idx)
            row = [int(i) for i in idx]
            for d in range(n):
                row += [repr(lo[d]), repr(hi[d])]
            wr.writerow(row)


def read_csv(path, grid: Grid) -> GridSet:
    mask = np.zeros(grid.res, dtype=bool)
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        n = grid.dim
        if header is not None and len(header) < n:
            raise ValueError("malformed grid-set CSV header")
        for row in rd:
            idx = tuple(int(v) for v in row[:n])
            mask[idx] = True
    return GridSet(grid, mask)

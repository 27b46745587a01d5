"""Finite complete-lattice kernel.

Lattice instances bundle an order, sups, distinguished elements, and an
instance-supplied way-below predicate (on a finite lattice the order itself
is the honest choice; grid-backed lattices use a conservative interior
test).  On top of that live the generic constructions the analyses need:
least prefix-points, right adjoints, step maps, and the best continuous
approximation through a base.

Two order orientations coexist in this package and each lattice instance
carries exactly one: reach-set fixed points iterate in inclusion order,
while the approximation machinery runs in reverse inclusion (sups are
intersections, the full box is bottom).  Grid carriers expose both
orientations via :func:`grid_inclusion_lattice` and
:func:`grid_reverse_lattice`.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

from . import gridset
from .gridset import Grid, GridSet


class IterationBudgetExceeded(Exception):
    """A fixed-point iteration failed to stabilize within its budget."""


class NotSupPreserving(Exception):
    """A map offered for adjunction fails sup preservation; carries a witness."""

    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


@dataclass
class Lattice:
    """A complete lattice presented operationally.

    ``elements``/``base`` may be None for carriers too large to enumerate;
    operations that need enumeration check for it.  ``way_below`` defaults
    to the order, which is exact on finite lattices.  ``wb_base_cover``,
    when supplied, maps x to a small family of base elements whose images
    under any monotone map have the same sup as the full way-below family;
    it is what makes bca computable on grid carriers.
    """

    leq: Callable[[Any, Any], bool]
    sup: Callable[[Iterable[Any]], Any]
    bottom: Any
    top: Any
    elements: Sequence[Any] | None = None
    way_below: Callable[[Any, Any], bool] | None = None
    base: Sequence[Any] | None = None
    continuous: bool = False
    wb_base_cover: Callable[[Any], Iterable[Any]] | None = None
    name: str = ""

    def __post_init__(self):
        if self.way_below is None:
            self.way_below = self.leq
        if self.base is None and self.elements is not None:
            self.base = self.elements

    def eq(self, a, b) -> bool:
        return self.leq(a, b) and self.leq(b, a)

    def join(self, a, b):
        return self.sup([a, b])


@dataclass
class MonotoneMap:
    """A monotone map between lattices, with a checkable monotonicity contract."""

    fn: Callable[[Any], Any]
    source: Lattice
    target: Lattice
    name: str = ""

    def __call__(self, x):
        return self.fn(x)

    def check_monotone(self, pairs: Iterable[tuple[Any, Any]] | None = None) -> bool:
        """Exhaustive when the source is enumerable and pairs is None."""
        if pairs is None:
            if self.source.elements is None:
                raise ValueError("source not enumerable; supply sample pairs")
            pairs = itertools.product(self.source.elements, repeat=2)
        for x, y in pairs:
            if self.source.leq(x, y) and not self.target.leq(self.fn(x), self.fn(y)):
                return False
        return True


def least_prefix_point(f: MonotoneMap, max_iters: int = 10**6):
    """Least x with f(x) <= x, by iterating x <- sup(x, f(x)) from bottom.

    Stabilizes on any finite lattice; the budget guards against
    non-finite or mis-specified instances.
    """
    lat = f.source
    x = lat.bottom
    for _ in range(max_iters):
        nxt = lat.sup([x, f(x)])
        if lat.eq(nxt, x):
            return x
        x = nxt
    raise IterationBudgetExceeded(f"no stabilization within {max_iters} iterations")


def right_adjoint(f: MonotoneMap, check_samples: int = 256, rng: random.Random | None = None) -> MonotoneMap:
    """Right adjoint g(y) = sup{x | f(x) <= y} of a sup-preserving map.

    Sup preservation is checked on the empty set, on all pairs when the
    source is small, and on sampled subsets otherwise; a counterexample
    raises NotSupPreserving.  The returned pair satisfies the Galois law
    x <= g(y) iff f(x) <= y.
    """
    X, Y = f.source, f.target
    if X.elements is None:
        raise ValueError("right_adjoint needs an enumerable source lattice")
    elems = list(X.elements)
    if not Y.eq(f(X.bottom), Y.bottom):
        raise NotSupPreserving("f does not preserve the empty sup", witness=())
    pairs = itertools.combinations(elems, 2)
    if len(elems) > 64:
        rng = rng or random.Random(0)
        pairs = ((rng.choice(elems), rng.choice(elems)) for _ in range(check_samples))
    for a, b in pairs:
        if not Y.eq(f(X.sup([a, b])), Y.sup([f(a), f(b)])):
            raise NotSupPreserving("f does not preserve a binary sup", witness=(a, b))

    def g(y):
        return X.sup([x for x in elems if Y.leq(f(x), y)])

    return MonotoneMap(g, Y, X, name=f"{f.name or 'f'}^R")


def step_map(x, y, source: Lattice, target: Lattice) -> MonotoneMap:
    """The map x' -> y when x is way-below x', else bottom; monotone because
    the way-below relation is upward closed in its second argument."""

    def fn(xp):
        return y if source.way_below(x, xp) else target.bottom

    return MonotoneMap(fn, source, target, name="step")


def bca_via_base(f: MonotoneMap, x):
    """Best continuous approximation at x: sup of f over base elements
    way-below x.  Requires a continuous source with a base (or a cover hook)."""
    X = f.source
    if not X.continuous:
        raise ValueError("bca_via_base needs a source lattice declared continuous")
    if X.wb_base_cover is not None:
        cover = list(X.wb_base_cover(x))
    else:
        if X.base is None:
            raise ValueError("continuous lattice without enumerable base or cover hook")
        cover = [b for b in X.base if X.way_below(b, x)]
    return f.target.sup([f(b) for b in cover])


# -- stock lattice builders -----------------------------------------------------


def chain_lattice(n: int) -> Lattice:
    """The chain 0 < 1 < ... < n-1."""
    elems = list(range(n))
    return Lattice(
        leq=lambda a, b: a <= b,
        sup=lambda xs: max(list(xs), default=0),
        bottom=0,
        top=n - 1,
        elements=elems,
        continuous=True,
        name=f"chain{n}",
    )


def powerset_lattice(atoms: Sequence[Any], reverse: bool = False) -> Lattice:
    """All subsets of ``atoms``; inclusion order, or reverse inclusion where
    sups are intersections and the full set is bottom."""
    universe = frozenset(atoms)
    elems = [frozenset(c) for r in range(len(atoms) + 1) for c in itertools.combinations(sorted(atoms), r)]
    if not reverse:

        def usup(xs):
            out = frozenset()
            for x in xs:
                out = out | x
            return out

        return Lattice(
            leq=lambda a, b: a <= b,
            sup=usup,
            bottom=frozenset(),
            top=universe,
            elements=elems,
            continuous=True,
            name="powerset",
        )

    def rsup(xs):
        xs = list(xs)
        if not xs:
            return universe
        out = xs[0]
        for x in xs[1:]:
            out = out & x
        return out

    return Lattice(
        leq=lambda a, b: a >= b,
        sup=rsup,
        bottom=universe,
        top=frozenset(),
        elements=elems,
        continuous=True,
        name="powerset-rev",
    )


def closed_sets_lattice(atoms: Sequence[Any], closed: Sequence[frozenset], reverse: bool = True) -> Lattice:
    """The closed subsets of a finite topological space, ordered by reverse
    inclusion (sups are intersections, which stay closed)."""
    elems = [frozenset(c) for c in closed]
    universe = frozenset(atoms)
    if universe not in elems or frozenset() not in elems:
        raise ValueError("closed family must contain the empty set and the space")

    def rsup(xs):
        xs = list(xs)
        if not xs:
            return universe
        out = xs[0]
        for x in xs[1:]:
            out = out & x
        return out

    if not reverse:
        raise ValueError("closed-set lattices are used in reverse inclusion here")
    return Lattice(
        leq=lambda a, b: a >= b,
        sup=rsup,
        bottom=universe,
        top=frozenset(),
        elements=elems,
        continuous=True,
        name="closed-rev",
    )


def grid_inclusion_lattice(grid: Grid, enumerate_elements: bool = False) -> Lattice:
    """Grid sets under inclusion: the home of reach-set fixed points."""
    n_cells = 1
    for r in grid.res:
        n_cells *= r
    elements = None
    if enumerate_elements:
        if n_cells > 16:
            raise ValueError("refusing to enumerate more than 2^16 grid sets")
        import numpy as np

        elements = []
        for bits in range(1 << n_cells):
            mask = np.array([(bits >> i) & 1 for i in range(n_cells)], dtype=bool).reshape(grid.res)
            elements.append(GridSet(grid, mask))

    def sup(xs):
        out = GridSet.empty(grid)
        for x in xs:
            out = out | x
        return out

    return Lattice(
        leq=lambda a, b: a <= b,
        sup=sup,
        bottom=GridSet.empty(grid),
        top=GridSet.full(grid),
        elements=elements,
        continuous=True,
        name="grid-incl",
    )


def grid_reverse_lattice(grid: Grid) -> Lattice:
    """Grid sets under reverse inclusion, with the conservative interior
    way-below test.  The base is the set of all grid sets at this resolution;
    it is never enumerated: for any monotone map the sup over the way-below
    base family is attained on the one-cell dilation, which is the unique
    largest way-below approximant, so the cover hook returns just that."""

    def sup(xs):
        out = GridSet.full(grid)
        for x in xs:
            out = out & x
        return out

    return Lattice(
        leq=lambda a, b: b <= a,
        sup=sup,
        bottom=GridSet.full(grid),
        top=GridSet.empty(grid),
        elements=None,
        way_below=gridset.way_below,
        base=None,
        continuous=True,
        wb_base_cover=lambda x: [x.dilate(1)],
        name="grid-rev",
    )

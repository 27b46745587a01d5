"""Built-in example systems and their closed-form oracle sets.

Three flow-bearing systems (a saturating exponential expander, an
exponential decay with refill, and a bouncing ball with kick) plus three
jump-heavy gap witnesses.  Each builder returns the system together with
its hard-constraint companion; the oracle table rasterizes the closed-form
reach sets the analyses are validated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gridset import (
    BoxRegion,
    FuncRegion,
    Grid,
    GridSet,
    IntervalUnionRegion,
    PointsRegion,
    Region,
    UnionRegion,
    rasterize,
    CONTAINS,
    DISJOINT,
    INTERSECTS,
)
from .hybrid import HardConstraint, HybridSystem, Jump, box_intersect

KINDS = ("expand", "decay", "bouncing_ball", "counterexample1", "counterexample2", "counterexample3")

DEFAULT_RES = {1: 256, 2: 128, 3: 64}


class BadParams(Exception):
    """System parameters violate the builder's invariants."""


class NoOracle(Exception):
    """No closed-form reach set is tabulated for this combination."""


def energy(h: float, v: float) -> float:
    """Mechanical energy of the ball under unit gravity."""
    return h + v * v / 2.0


@dataclass(frozen=True)
class BuiltSystem:
    kind: str
    params: dict
    system: HybridSystem
    hard: HardConstraint
    hard_relaxed: Optional[HardConstraint] = None

    def default_grid(self, resolution: int | None = None) -> Grid:
        n = self.system.dim
        r = resolution or DEFAULT_RES[n]
        return Grid(self.system.window_lo, self.system.window_hi, (r,) * n)


# -- builders --------------------------------------------------------------------


def _expand(M: float, variant: str) -> BuiltSystem:
    if M <= 0:
        raise BadParams("expand needs M > 0")
    closure = variant == "closure_variant"

    def flow(lo, hi):
        c = box_intersect(lo, hi, (0.0,), (M,))
        if c is None:
            return None
        vlo, vhi = c[0][0], c[1][0]
        if closure and hi[0] >= M:
            vlo = min(vlo, 0.0)
        return (vlo,), (vhi,)

    def flow0(lo, hi):
        if box_intersect(lo, hi, (0.0,), (M,)) is None:
            return None
        return (-M,), (M,)

    sys = HybridSystem(
        dim=1,
        window_lo=(0.0,),
        window_hi=(M,),
        vel_bound=(M,),
        flow=flow,
        flow_domain=BoxRegion((0.0,), (M,)),
        jumps=(),
        name="expand",
    )
    h0 = HybridSystem(
        dim=1,
        window_lo=(0.0,),
        window_hi=(M,),
        vel_bound=(M,),
        flow=flow0,
        flow_domain=BoxRegion((0.0,), (M,)),
        jumps=(),
        name="expand-hard",
    )
    return BuiltSystem("expand", {"M": M}, sys, HardConstraint(h0))


def _decay_flow(M: float):
    def flow(lo, hi):
        c = box_intersect(lo, hi, (0.0,), (M,))
        if c is None:
            return None
        return (-c[1][0],), (-c[0][0],)

    return flow


def _decay(M: float, variant: str) -> BuiltSystem:
    if M <= 0:
        raise BadParams("decay needs M > 0")

    refill = Jump((0.0,), (0.0,), lambda lo, hi: ((M,), (M,)), name="refill")

    sys = HybridSystem(
        dim=1,
        window_lo=(0.0,),
        window_hi=(M,),
        vel_bound=(M,),
        flow=_decay_flow(M),
        flow_domain=BoxRegion((0.0,), (M,)),
        jumps=(refill,),
        point_jumps=lambda x: [(M,)] if abs(x[0]) <= 1e-12 else [],
        name="decay",
    )

    def flow0(lo, hi):
        if box_intersect(lo, hi, (0.0,), (M,)) is None:
            return None
        return (-M,), (M,)

    h0 = HybridSystem(
        dim=1,
        window_lo=(0.0,),
        window_hi=(M,),
        vel_bound=(M,),
        flow=flow0,
        flow_domain=BoxRegion((0.0,), (M,)),
        jumps=(Jump((0.0,), (M,), lambda lo, hi: ((0.0,), (M,)), name="any"),),
        name="decay-hard",
    )
    return BuiltSystem("decay", {"M": M}, sys, HardConstraint(h0))


class _BallDomain(Region):
    """The compact ball support: nonnegative height, energy at most E0."""

    def __init__(self, E0: float):
        self.E0 = E0

    def classify(self, lo, hi):
        (hl, vl), (hh, vh) = lo, hi
        if hh < 0:
            return DISJOINT
        v_min = 0.0 if vl <= 0.0 <= vh else min(abs(vl), abs(vh))
        v_max = max(abs(vl), abs(vh))
        e_min = max(hl, 0.0) + v_min * v_min / 2.0
        e_max = hh + v_max * v_max / 2.0
        if e_min > self.E0:
            return DISJOINT
        if hl >= 0 and e_max <= self.E0:
            return CONTAINS
        return INTERSECTS


def _ball_reset(b: float):
    def reset(lo, hi):
        a, c = lo[1], hi[1]
        p, q = b * a, b * c
        if p > q:
            p, q = q, p
        return (0.0, p), (0.0, q)

    return reset


def _bouncing_ball(b: float, V: float, V0: float, compact: bool, variant: str) -> BuiltSystem:
    if not (V0 > V > 0):
        raise BadParams("bouncing ball needs V0 > V > 0")
    if compact and abs(b) > 1:
        raise BadParams("compact bouncing ball needs |b| <= 1")
    E0 = energy(0.0, V0)
    win_lo = (0.0, -V0)
    win_hi = (E0, V0)
    domain = _BallDomain(E0) if compact else BoxRegion((0.0, win_lo[1]), (math.inf, win_hi[1]))

    def flow(lo, hi):
        if not compact:
            if hi[0] < 0:
                return None
            return (lo[1], -1.0), (hi[1], -1.0)
        c = box_intersect(lo, hi, win_lo, win_hi)
        if c is None or domain.classify(lo, hi) == DISJOINT:
            return None
        (hl, vl), (hh, vh) = c
        return (vl, -1.0), (vh, -1.0)

    def clip(lo, hi):
        return box_intersect(lo, hi, (0.0, win_lo[1]), (math.inf if not compact else win_hi[0], win_hi[1]))

    bounce = Jump((0.0, -V0), (0.0, 0.0), _ball_reset(b), name="bounce")
    kick = Jump((0.0, 0.0), (0.0, 0.0), lambda lo, hi: ((0.0, V), (0.0, V)), name="kick")

    def point_jumps(x):
        h, v = x
        if abs(h) <= 1e-12 and -V0 <= v < 0:
            return [(0.0, b * v)]
        if abs(h) <= 1e-12 and abs(v) <= 1e-12:
            return [(0.0, V)]
        return []

    sys = HybridSystem(
        dim=2,
        window_lo=win_lo,
        window_hi=win_hi,
        vel_bound=(V0, 1.0),
        flow=flow,
        flow_domain=domain,
        jumps=(bounce, kick),
        clip_domain=clip,
        point_jumps=point_jumps,
        split_dims=(1,),
        name="bouncing-ball",
    )

    def bound_reset(lo, hi):
        a = lo[1]
        return (0.0, a), (0.0, -a)

    bounce0 = Jump((0.0, -V0), (0.0, 0.0), bound_reset, name="bounce-bound")
    h0 = HybridSystem(
        dim=2,
        window_lo=win_lo,
        window_hi=win_hi,
        vel_bound=(V0, 1.0),
        flow=flow,
        flow_domain=domain,
        jumps=(bounce0, kick),
        clip_domain=clip,
        name="ball-hard",
    )
    bounce0r = Jump((0.0, -V0), (0.0, 0.0), lambda lo, hi: ((0.0, -V0), (0.0, V0)), name="bounce-relaxed")
    h0r = HybridSystem(
        dim=2,
        window_lo=win_lo,
        window_hi=win_hi,
        vel_bound=(V0, 1.0),
        flow=flow,
        flow_domain=domain,
        jumps=(bounce0r, kick),
        clip_domain=clip,
        name="ball-hard-relaxed",
    )
    return BuiltSystem(
        "bouncing_ball",
        {"b": b, "V": V, "V0": V0, "compact": compact},
        sys,
        HardConstraint(h0),
        hard_relaxed=HardConstraint(h0r),
    )


def _permissive_hard(sys: HybridSystem) -> HardConstraint:
    """Anything-goes constraint over the window; gap-witness systems are only
    probed for input robustness, never system-fattened."""
    full = Jump(sys.window_lo, sys.window_hi, lambda lo, hi: (sys.window_lo, sys.window_hi), name="any")

    def flow0(lo, hi):
        vb = sys.vel_bound
        return tuple(-v for v in vb), vb

    return HardConstraint(
        HybridSystem(
            dim=sys.dim,
            window_lo=sys.window_lo,
            window_hi=sys.window_hi,
            vel_bound=sys.vel_bound,
            flow=flow0 if sys.flow is not None else None,
            jumps=(full,),
            name=f"{sys.name}-hard",
        )
    )


def _counterexample1() -> BuiltSystem:
    hi = 2.5
    halve = Jump((0.0,), (hi,), lambda lo, h: ((lo[0] / 2.0,), (h[0] / 2.0,)), name="halve")
    spawn = Jump((0.0,), (0.0,), lambda lo, h: ((2.0,), (2.0,)), name="spawn")

    def point_jumps(x):
        out = [(x[0] / 2.0,)]
        if abs(x[0]) <= 1e-15:
            out.append((2.0,))
        return out

    sys = HybridSystem(
        dim=1,
        window_lo=(0.0,),
        window_hi=(hi,),
        vel_bound=(1.0,),
        flow=None,
        jumps=(halve, spawn),
        point_jumps=point_jumps,
        name="counterexample1",
    )
    return BuiltSystem("counterexample1", {}, sys, _permissive_hard(sys))


def _counterexample2() -> BuiltSystem:
    # The ray from 2 is unbounded; it is clipped at the window edge, and the
    # edge stands for the whole truncated tail: reciprocal images of boxes
    # touching the edge extend down to 0 (the tail's accumulation point).
    hi = 4.0
    ray = Jump((2.0,), (2.0,), lambda lo, h: ((2.0,), (hi,)), name="ray")

    def recip_reset(lo, h):
        img_lo = 0.0 if h[0] >= hi else 1.0 / h[0]
        return (img_lo,), (1.0 / lo[0],)

    recip = Jump((2.0,), (hi,), recip_reset, name="recip")
    spawn = Jump((0.0,), (0.0,), lambda lo, h: ((1.0,), (1.0,)), name="spawn")

    def point_jumps(x):
        out = []
        if abs(x[0] - 2.0) <= 1e-12:
            out.extend((t,) for t in np.linspace(2.0, hi, 129))
        if x[0] >= 2.0:
            out.append((1.0 / x[0],))
        if abs(x[0] - hi) <= 1e-12:
            out.extend((0.25 * 0.5**k,) for k in range(1, 24))
        if abs(x[0]) <= 1e-15:
            out.append((1.0,))
        return out

    sys = HybridSystem(
        dim=1,
        window_lo=(0.0,),
        window_hi=(hi,),
        vel_bound=(1.0,),
        flow=None,
        jumps=(ray, recip, spawn),
        point_jumps=point_jumps,
        name="counterexample2",
    )
    return BuiltSystem("counterexample2", {}, sys, _permissive_hard(sys))


def _counterexample3() -> BuiltSystem:
    hi = 2.5
    spawn = Jump((0.0,), (0.0,), lambda lo, h: ((2.0,), (2.0,)), name="spawn")
    sys = HybridSystem(
        dim=1,
        window_lo=(0.0,),
        window_hi=(hi,),
        vel_bound=(hi,),
        flow=_decay_flow(hi),
        flow_domain=BoxRegion((0.0,), (hi,)),
        jumps=(spawn,),
        point_jumps=lambda x: [(2.0,)] if abs(x[0]) <= 1e-12 else [],
        name="counterexample3",
    )
    return BuiltSystem("counterexample3", {}, sys, _permissive_hard(sys))


def make_system(kind: str, variant: str = "paper", **params) -> BuiltSystem:
    """Build a named system with its hard constraint.  Parameters:
    expand/decay take M; bouncing_ball takes b, V, V0 and compact."""
    kind = kind.lower().replace("-", "_")
    aliases = {"ce1": "counterexample1", "ce2": "counterexample2", "ce3": "counterexample3", "ball": "bouncing_ball"}
    kind = aliases.get(kind, kind)
    if variant not in ("paper", "closure_variant"):
        raise BadParams(f"unknown variant {variant!r}")
    if kind == "expand":
        return _expand(float(params.pop("M", 2.0)), variant)
    if kind == "decay":
        return _decay(float(params.pop("M", 2.0)), variant)
    if kind == "bouncing_ball":
        return _bouncing_ball(
            float(params.pop("b", -0.5)),
            float(params.pop("V", 2.0)),
            float(params.pop("V0", 3.0)),
            bool(params.pop("compact", True)),
            variant,
        )
    if kind == "counterexample1":
        return _counterexample1()
    if kind == "counterexample2":
        return _counterexample2()
    if kind == "counterexample3":
        return _counterexample3()
    raise BadParams(f"unknown system kind {kind!r}")


# -- oracle sets -----------------------------------------------------------------


class EnergyCurve(Region):
    """States of one exact energy level with nonnegative height."""

    def __init__(self, level: float):
        self.level = level

    def classify(self, lo, hi):
        (hl, vl), (hh, vh) = lo, hi
        if hh < 0:
            return DISJOINT
        v_min = 0.0 if vl <= 0.0 <= vh else min(abs(vl), abs(vh))
        v_max = max(abs(vl), abs(vh))
        e_min = max(hl, 0.0) + v_min * v_min / 2.0
        e_max = hh + v_max * v_max / 2.0
        return INTERSECTS if e_min <= self.level <= e_max else DISJOINT


class EnergyBand(Region):
    """States with energy in a closed range and nonnegative height."""

    def __init__(self, e_lo: float, e_hi: float):
        self.e_lo = e_lo
        self.e_hi = e_hi

    def classify(self, lo, hi):
        (hl, vl), (hh, vh) = lo, hi
        if hh < 0:
            return DISJOINT
        v_min = 0.0 if vl <= 0.0 <= vh else min(abs(vl), abs(vh))
        v_max = max(abs(vl), abs(vh))
        e_min = max(hl, 0.0) + v_min * v_min / 2.0
        e_max = hh + v_max * v_max / 2.0
        if e_min > self.e_hi or e_max < self.e_lo:
            return DISJOINT
        if hl >= 0 and self.e_lo <= e_min and e_max <= self.e_hi:
            return CONTAINS
        return INTERSECTS


def _geometric_levels(u: float, ratio: float, floor: float) -> list[float]:
    """u, r*u, r^2*u, ... truncated once below ``floor`` (one term kept there)."""
    out = []
    x = u
    while x >= floor and len(out) < 10_000:
        out.append(x)
        x *= ratio
    out.append(x)
    return out


ANALYSES = ("finite", "finite_closure", "safe", "robust_initial", "robust", "robust_relaxed")


def oracle_set(kind: str, params: dict, initial, analysis: str, grid: Grid) -> GridSet:
    """Outer rasterization of the tabulated closed-form reach set.

    ``initial`` is m0 for the one-dimensional systems and v0 (start state
    (0, v0)) for the ball.  Raises NoOracle for combinations without a
    tabulated answer.
    """
    if analysis not in ANALYSES:
        raise NoOracle(f"unknown analysis {analysis!r}")
    kind = kind.lower().replace("-", "_")
    w = grid.max_width

    def iv(a, b, cl=True, ch=True):
        return IntervalUnionRegion([(a, b, cl, ch)])

    if kind == "expand":
        M = float(params.get("M", 2.0))
        m0 = float(initial)
        if not 0 <= m0 <= M:
            raise NoOracle("expand oracle needs 0 <= m0 <= M")
        if m0 > 0:
            return rasterize(iv(m0, M), grid, "outer")
        if analysis in ("finite", "finite_closure", "safe"):
            return GridSet.from_points(grid, [(0.0,)])
        return rasterize(iv(0.0, M), grid, "outer")

    if kind == "decay":
        M = float(params.get("M", 2.0))
        m0 = float(initial)
        if not 0 <= m0 <= M:
            raise NoOracle("decay oracle needs 0 <= m0 <= M")
        if m0 == 0 or analysis in ("safe", "robust_initial", "robust"):
            return rasterize(iv(0.0, M), grid, "outer")
        if analysis == "finite":
            return rasterize(iv(0.0, m0, False, True), grid, "outer")
        if analysis == "finite_closure":
            return rasterize(iv(0.0, m0), grid, "outer")
        raise NoOracle(f"decay has no {analysis} oracle")

    if kind == "counterexample1":
        if float(initial) != 1.0:
            raise NoOracle("counterexample1 oracle is tabulated for initial 1")
        pts = [(x,) for x in _geometric_levels(1.0, 0.5, w)]
        if analysis == "finite":
            return rasterize(PointsRegion(grid, pts), grid, "outer")
        if analysis == "finite_closure":
            return rasterize(PointsRegion(grid, pts + [(0.0,)]), grid, "outer")
        if analysis == "safe":
            return rasterize(PointsRegion(grid, pts + [(0.0,), (2.0,)]), grid, "outer")
        raise NoOracle(f"counterexample1 has no {analysis} oracle")

    if kind == "counterexample2":
        if float(initial) != 2.0:
            raise NoOracle("counterexample2 oracle is tabulated for initial 2")
        hi = 4.0  # the unbounded ray [2, +inf) is clipped at the window edge
        if analysis == "finite":
            reg = IntervalUnionRegion([(2.0, hi, True, True), (0.0, 0.5, False, True)])
        elif analysis == "finite_closure":
            reg = IntervalUnionRegion([(2.0, hi, True, True), (0.0, 0.5, True, True)])
        elif analysis == "safe":
            return rasterize(
                UnionRegion(
                    [
                        IntervalUnionRegion([(2.0, hi, True, True), (0.0, 0.5, True, True)]),
                        PointsRegion(grid, [(1.0,)]),
                    ]
                ),
                grid,
                "outer",
            )
        else:
            raise NoOracle(f"counterexample2 has no {analysis} oracle")
        return rasterize(reg, grid, "outer")

    if kind == "counterexample3":
        if float(initial) != 1.0:
            raise NoOracle("counterexample3 oracle is tabulated for initial 1")
        if analysis == "finite":
            return rasterize(iv(0.0, 1.0, False, True), grid, "outer")
        if analysis == "finite_closure":
            return rasterize(iv(0.0, 1.0), grid, "outer")
        if analysis == "safe":
            return rasterize(iv(0.0, 2.0), grid, "outer")
        raise NoOracle(f"counterexample3 has no {analysis} oracle")

    if kind == "bouncing_ball":
        b = float(params.get("b", -0.5))
        V = float(params.get("V", 2.0))
        V0 = float(params.get("V0", 3.0))
        v0 = float(initial)
        if not (0 < v0 < V < V0):
            raise NoOracle("ball oracle needs 0 < v0 < V < V0")
        floor = w

        def curves(levels):
            return UnionRegion([EnergyCurve(energy(0.0, u)) for u in levels])

        if b == -1.0:
            if analysis in ("finite", "finite_closure", "safe", "robust_initial"):
                return rasterize(EnergyCurve(energy(0.0, v0)), grid, "outer")
            if analysis == "robust":
                return rasterize(EnergyBand(0.0, energy(0.0, V)), grid, "outer")
            return rasterize(EnergyBand(0.0, energy(0.0, V0)), grid, "outer")
        if -1.0 < b < 0.0:
            fam_v0 = _geometric_levels(v0, abs(b), floor)
            if analysis in ("finite", "finite_closure"):
                reg = curves(fam_v0)
            elif analysis in ("safe", "robust_initial", "robust"):
                reg = UnionRegion([curves(fam_v0), EnergyCurve(0.0), curves(_geometric_levels(V, abs(b), floor))])
            else:
                raise NoOracle("relaxed-constraint oracle tabulated only for |b| = 1")
            return rasterize(reg, grid, "outer")
        if b == 0.0:
            if analysis == "robust_relaxed":
                raise NoOracle("relaxed-constraint oracle tabulated only for |b| = 1")
            reg = UnionRegion([EnergyCurve(energy(0.0, v0)), EnergyCurve(0.0), EnergyCurve(energy(0.0, V))])
            return rasterize(reg, grid, "outer")
        if 0.0 < b < 1.0:
            slow_v0 = PointsRegion(grid, [(0.0, -x) for x in _geometric_levels(v0, b, floor)])
            if analysis in ("finite", "finite_closure"):
                reg = UnionRegion([EnergyCurve(energy(0.0, v0)), slow_v0])
            elif analysis in ("safe", "robust_initial", "robust"):
                slow_V = PointsRegion(grid, [(0.0, -x) for x in _geometric_levels(V, b, floor)])
                reg = UnionRegion(
                    [EnergyCurve(energy(0.0, v0)), slow_v0, EnergyCurve(0.0), EnergyCurve(energy(0.0, V)), slow_V]
                )
            else:
                raise NoOracle("relaxed-constraint oracle tabulated only for |b| = 1")
            return rasterize(reg, grid, "outer")
        if b == 1.0:
            if analysis in ("finite", "finite_closure", "safe", "robust_initial"):
                return rasterize(EnergyCurve(energy(0.0, v0)), grid, "outer")
            vmax = V if analysis == "robust" else V0
            reg = UnionRegion(
                [EnergyCurve(energy(0.0, v0)), EnergyCurve(energy(0.0, V)), BoxRegion((0.0, -vmax), (0.0, 0.0))]
            )
            return rasterize(reg, grid, "outer")
        raise NoOracle("ball oracles are tabulated for |b| <= 1 only")

    raise NoOracle(f"unknown system kind {kind!r}")

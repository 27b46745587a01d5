"""Hybrid-system model: flow and jump relations with conservative box
extensions, their transition operator on grid sets, support, clock
extension, and hard-constraint-clipped fattening.

A system's flow is supplied as an interval extension mapping a state box to
either None (the box misses the flow domain) or a velocity box enclosing
every velocity the relation admits over the box.  Jumps are guard/reset
pairs whose resets are box extensions too; an alternative raw-relation jump
(an occupancy mask over the product grid) covers relations that are not
naturally guard/reset shaped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .gridset import (
    BoxRegion,
    FuncRegion,
    Grid,
    GridSet,
    Region,
    UnionRegion,
    rasterize,
    DISJOINT,
)

Box = tuple[tuple[float, ...], tuple[float, ...]]


class StepTooLarge(Exception):
    """dt times the velocity bound exceeds the box diameter: the one-step
    enclosure would be meaningless."""


# -- box helpers (plain tuples: these sit on the hot path) ---------------------


def box_intersect(lo1, hi1, lo2, hi2) -> Optional[Box]:
    lo = tuple(max(a, b) for a, b in zip(lo1, lo2))
    hi = tuple(min(a, b) for a, b in zip(hi1, hi2))
    for a, b in zip(lo, hi):
        if b < a:
            return None
    return lo, hi


def box_inflate(lo, hi, delta: float) -> Box:
    return tuple(a - delta for a in lo), tuple(b + delta for b in hi)


def box_hull(lo1, hi1, lo2, hi2) -> Box:
    return tuple(min(a, b) for a, b in zip(lo1, lo2)), tuple(max(a, b) for a, b in zip(hi1, hi2))


def box_contains(lo1, hi1, lo2, hi2, tol: float = 0.0) -> bool:
    """Whether [lo2, hi2] lies inside [lo1, hi1] up to tol."""
    return all(a - tol <= c and d <= b + tol for a, b, c, d in zip(lo1, hi1, lo2, hi2))


@dataclass(frozen=True)
class Jump:
    """One guard/reset pair: fires from states in the closed guard box,
    landing anywhere in the reset extension's image box."""

    guard_lo: tuple[float, ...]
    guard_hi: tuple[float, ...]
    reset: Callable[[tuple, tuple], Optional[Box]]
    name: str = ""

    def guard_box(self) -> Box:
        return self.guard_lo, self.guard_hi

    def image(self, lo, hi) -> Optional[Box]:
        """Reset image of (box ∩ guard); None when the box misses the guard."""
        clipped = box_intersect(lo, hi, self.guard_lo, self.guard_hi)
        if clipped is None:
            return None
        return self.reset(*clipped)


@dataclass(frozen=True)
class RawJump:
    """Jump relation given directly as a mask over the 2n-dimensional
    product grid (state cells x successor cells)."""

    relation: GridSet

    def flat(self, n_src: int) -> np.ndarray:
        return self.relation.mask.reshape(n_src, -1)


@dataclass(frozen=True)
class HybridSystem:
    """Flow + jumps over a compact window, with the bounds the grid
    operators need (velocity bound for step sizing and drift padding).

    ``split_dims`` names dimensions along which flow enclosures shear
    (position driven by another coordinate); enclosure-based analyses split
    wide seed boxes along them to keep guard-crossing slop sub-cell."""

    dim: int
    window_lo: tuple[float, ...]
    window_hi: tuple[float, ...]
    vel_bound: tuple[float, ...]
    flow: Optional[Callable[[tuple, tuple], Optional[Box]]] = None
    flow_domain: Optional[Region] = None
    jumps: tuple = ()
    clip_domain: Optional[Callable[[tuple, tuple], Optional[Box]]] = None
    point_jumps: Optional[Callable[[tuple], list]] = None
    split_dims: tuple[int, ...] = ()
    name: str = ""

    @property
    def jump_only(self) -> bool:
        return self.flow is None

    def window(self) -> Box:
        return self.window_lo, self.window_hi

    def default_dt(self, grid: Grid) -> float:
        """Half a cell width per step along the fastest dimension."""
        vals = [w / vb for w, vb in zip(grid.widths, self.vel_bound) if vb > 0]
        if not vals:
            raise ValueError("system has no positive velocity bound")
        return 0.5 * min(vals)


@dataclass(frozen=True)
class HardConstraint:
    """The most permissive system perturbations may not exceed; analyzed
    systems must refine it (flow and jumps boxwise inside its own)."""

    h0: HybridSystem


# -- grid operators -------------------------------------------------------------


def jump_post(h: HybridSystem, s: GridSet) -> GridSet:
    """Outer grid set of one-jump successors of s."""
    grid = s.grid
    out = np.zeros(grid.res, dtype=bool)
    if s.is_empty:
        return GridSet(grid, out)
    occupied = s.occupied_indices()
    for j in h.jumps:
        if isinstance(j, RawJump):
            flat = j.flat(int(np.prod(grid.res)))
            src = s.mask.reshape(-1)
            hit = flat[src].any(axis=0).reshape(grid.res)
            out |= hit
            continue
        for idx in occupied:
            lo, hi = grid.cell_box(idx)
            img = j.image(lo, hi)
            if img is None:
                continue
            rng = grid.index_range(*img)
            if rng is None:
                continue
            out[tuple(slice(i0, i1 + 1) for i0, i1 in rng)] = True
    return GridSet(grid, out)


def flow_step(h: HybridSystem, s: GridSet, dt: float) -> GridSet:
    """s together with an outer enclosure of flow successors for durations
    up to dt: each occupied cell is drift-padded by dt times the velocity
    bound, its velocity box evaluated there, and the swept box rasterized."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = s.grid
    for w_lo, w_hi, vb in zip(h.window_lo, h.window_hi, h.vel_bound):
        if dt * vb > (w_hi - w_lo):
            raise StepTooLarge(f"dt*velocity bound {dt * vb} exceeds window extent {w_hi - w_lo}")
    if h.flow is None or s.is_empty:
        return s
    out = np.array(s.mask)
    pads = tuple(dt * vb for vb in h.vel_bound)
    for idx in s.occupied_indices():
        lo, hi = grid.cell_box(idx)
        if h.flow_domain is not None and h.flow_domain.classify(lo, hi) == DISJOINT:
            continue
        padded = box_intersect(
            tuple(a - p for a, p in zip(lo, pads)),
            tuple(b + p for b, p in zip(hi, pads)),
            h.window_lo,
            h.window_hi,
        )
        if padded is None:
            continue
        v = h.flow(*padded)
        if v is None:
            continue
        vlo, vhi = v
        img_lo = tuple(a + dt * min(vl, 0.0) for a, vl in zip(lo, vlo))
        img_hi = tuple(b + dt * max(vh, 0.0) for b, vh in zip(hi, vhi))
        clipped = box_intersect(img_lo, img_hi, h.window_lo, h.window_hi)
        if clipped is None:
            continue
        rng = grid.index_range(*clipped)
        if rng is None:
            continue
        out[tuple(slice(i0, i1 + 1) for i0, i1 in rng)] = True
    return GridSet(grid, out)


def transition_post(h: HybridSystem, s: GridSet, dt: float | None = None) -> GridSet:
    """One application of the transition operator: s with its one-jump
    successors and one bounded flow step; iterated to a fixed point this
    recovers the flow closure over all durations."""
    out = s | jump_post(h, s)
    if h.flow is not None:
        if dt is None:
            dt = h.default_dt(s.grid)
        out = out | flow_step(h, s, dt)
    return out


def support(h: HybridSystem, grid: Grid) -> GridSet:
    """Outer grid set of dom F ∪ dom G ∪ ran G intersected with the grid box."""
    parts: list[Region] = []
    if h.flow_domain is not None:
        parts.append(h.flow_domain)
    elif h.flow is not None:
        parts.append(FuncRegion(lambda lo, hi: DISJOINT if h.flow(lo, hi) is None else 0))
    out = rasterize(UnionRegion(parts), grid, "outer") if parts else GridSet.empty(grid)
    for j in h.jumps:
        if isinstance(j, RawJump):
            rel = j.relation
            n = grid.dim
            half = rel.grid.res[:n]
            flat = rel.mask.reshape(int(np.prod(half)), -1)
            src = flat.any(axis=1).reshape(half)
            dst = flat.any(axis=0).reshape(rel.grid.res[n:])
            out = out | GridSet(grid, src) | GridSet(grid, dst)
            continue
        gx = box_intersect(j.guard_lo, j.guard_hi, h.window_lo, h.window_hi)
        if gx is None:
            continue
        out = out | GridSet.from_boxes(grid, [gx])
        img = j.image(*gx)
        if img is not None:
            out = out | GridSet.from_boxes(grid, [img])
    return out


def clock_extend(h: HybridSystem, t_max: float) -> HybridSystem:
    """The (n+1)-dimensional system with a unit-rate clock prepended; jumps
    leave the clock fixed, flows advance it at rate one."""
    if t_max <= 0:
        raise ValueError("t_max must be positive")

    flow = None
    if h.flow is not None:
        base_flow = h.flow

        def flow(lo, hi):
            if lo[0] > t_max or hi[0] < 0:
                return None
            v = base_flow(lo[1:], hi[1:])
            if v is None:
                return None
            vlo, vhi = v
            return (1.0,) + vlo, (1.0,) + vhi

    domain = None
    if h.flow_domain is not None:
        inner = h.flow_domain

        def _cls(lo, hi):
            if lo[0] > t_max or hi[0] < 0:
                return DISJOINT
            return inner.classify(lo[1:], hi[1:])

        domain = FuncRegion(_cls)

    jumps = []
    for j in h.jumps:
        if isinstance(j, RawJump):
            raise ValueError("raw-relation jumps cannot be clock-extended")
        base = j

        def make(base):
            def reset(lo, hi):
                img = base.reset(lo[1:], hi[1:])
                if img is None:
                    return None
                return (lo[0],) + img[0], (hi[0],) + img[1]

            return Jump((0.0,) + base.guard_lo, (t_max,) + base.guard_hi, reset, name=base.name)

        jumps.append(make(base))

    clip = None
    if h.clip_domain is not None:
        base_clip = h.clip_domain

        def clip(lo, hi):
            inner_box = base_clip(lo[1:], hi[1:])
            if inner_box is None:
                return None
            t = box_intersect((lo[0],), (hi[0],), (0.0,), (t_max,))
            if t is None:
                return None
            return t[0] + inner_box[0], t[1] + inner_box[1]

    return HybridSystem(
        dim=h.dim + 1,
        window_lo=(0.0,) + h.window_lo,
        window_hi=(t_max,) + h.window_hi,
        vel_bound=(1.0,) + h.vel_bound,
        flow=flow,
        flow_domain=domain,
        jumps=tuple(jumps),
        clip_domain=clip,
        split_dims=tuple(d + 1 for d in h.split_dims),
        name=f"clocked({h.name})" if h.name else "clocked",
    )


# -- fattening clipped by a hard constraint -------------------------------------


def fatten_system(h: HybridSystem, delta: float, hc: HardConstraint) -> HybridSystem:
    """Componentwise delta-fattening of the flow and jump relations (as
    subsets of the squared state space, max norm) intersected with the hard
    constraint.  delta = 0 denotes the original system up to extension slack,
    and the result refines hc for every delta."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    h0 = hc.h0

    flow = None
    if h.flow is not None:
        base_flow = h.flow
        bound_flow = h0.flow

        def flow(lo, hi):
            v = base_flow(*box_inflate(lo, hi, delta))
            if v is None:
                return None
            vlo = tuple(a - delta for a in v[0])
            vhi = tuple(b + delta for b in v[1])
            if bound_flow is None:
                return None
            v0 = bound_flow(lo, hi)
            if v0 is None:
                return None
            return box_intersect(vlo, vhi, v0[0], v0[1])

    domain = h.flow_domain
    if domain is not None and delta > 0:
        inner = domain

        def _cls(lo, hi):
            return inner.classify(*box_inflate(lo, hi, delta))

        domain = FuncRegion(_cls)
    if h0.flow_domain is not None and domain is not None:
        outer0 = h0.flow_domain
        mid = domain

        def _cls2(lo, hi):
            a = mid.classify(lo, hi)
            b = outer0.classify(lo, hi)
            return min(a, b) if DISJOINT not in (a, b) else DISJOINT

        domain = FuncRegion(_cls2)

    jumps = []
    for j in h.jumps:
        if isinstance(j, RawJump):
            ks = [int(math.ceil(delta / w - 1e-12)) if delta > 0 else 0 for w in j.relation.grid.widths]
            fat = j.relation.dilate(ks)
            raw0 = [k for k in h0.jumps if isinstance(k, RawJump)]
            if raw0:
                fat = fat & raw0[0].relation
                jumps.append(RawJump(fat))
            elif h0.jumps:
                jumps.append(RawJump(fat))
            continue
        for j0 in h0.jumps:
            if isinstance(j0, RawJump):
                continue
            g_lo, g_hi = box_inflate(j.guard_lo, j.guard_hi, delta)
            guard = box_intersect(g_lo, g_hi, j0.guard_lo, j0.guard_hi)
            if guard is None:
                continue

            def make(j=j, j0=j0, guard=guard):
                def reset(lo, hi):
                    img = j.image(*box_inflate(lo, hi, delta))
                    if img is None:
                        return None
                    img = box_inflate(*img, delta)
                    bound = j0.image(lo, hi)
                    if bound is None:
                        return None
                    return box_intersect(*img, *bound)

                return Jump(guard[0], guard[1], reset, name=f"{j.name or 'jump'}~{delta:g}")

            jumps.append(make())

    return replace(
        h,
        flow=flow,
        flow_domain=domain,
        jumps=tuple(jumps),
        name=f"{h.name}+{delta:g}" if h.name else f"fattened{delta:g}",
    )


def refines(h: HybridSystem, hc: HardConstraint, n_probes: int = 64, seed: int = 0, tol: float = 1e-9) -> bool:
    """Sampled boxwise containment check: h's flow velocities and jump
    images must lie inside hc's on random probe boxes."""
    rng = np.random.default_rng(seed)
    h0 = hc.h0
    lo = np.asarray(h.window_lo)
    hi = np.asarray(h.window_hi)
    for _ in range(n_probes):
        a = lo + (hi - lo) * rng.random(h.dim)
        b = a + (hi - a) * rng.random(h.dim) * 0.25
        box = (tuple(a), tuple(b))
        if h.flow is not None:
            v = h.flow(*box)
            if v is not None:
                if h0.flow is None:
                    return False
                v0 = h0.flow(*box)
                if v0 is None or not box_contains(v0[0], v0[1], v[0], v[1], tol):
                    return False
        for j in h.jumps:
            if isinstance(j, RawJump):
                continue
            clipped = box_intersect(*box, j.guard_lo, j.guard_hi)
            if clipped is None:
                clipped = box_intersect(j.guard_lo, j.guard_hi, j.guard_lo, j.guard_hi)
            img = j.image(*clipped)
            if img is None:
                continue
            ok = False
            for j0 in h0.jumps:
                if isinstance(j0, RawJump):
                    continue
                sub = box_intersect(*clipped, j0.guard_lo, j0.guard_hi)
                if sub is None or sub != clipped:
                    continue
                bound = j0.image(*clipped)
                if bound is not None and box_contains(bound[0], bound[1], img[0], img[1], tol):
                    ok = True
                    break
            if not ok:
                return False
    return True


# -- JSON system definitions (jump-only, affine resets) --------------------------


def _affine_reset(matrix: Sequence[Sequence[float]], offset: Sequence[float]):
    A = [tuple(row) for row in matrix]
    c = tuple(offset)

    def reset(lo, hi):
        out_lo, out_hi = [], []
        for row, ci in zip(A, c):
            acc_lo = acc_hi = ci
            for aij, xl, xh in zip(row, lo, hi):
                if aij >= 0:
                    acc_lo += aij * xl
                    acc_hi += aij * xh
                else:
                    acc_lo += aij * xh
                    acc_hi += aij * xl
            out_lo.append(acc_lo)
            out_hi.append(acc_hi)
        return tuple(out_lo), tuple(out_hi)

    return reset, A, c


def load_system_json(source) -> HybridSystem:
    """Build a jump-only system from the JSON definition format:
    {"dimension": n, "box": [[lo, hi], ...],
     "jumps": [{"guard_box": [[lo, hi], ...],
                "reset": {"kind": "affine", "matrix": [...], "offset": [...]}}]}
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "read"):
        data = json.load(open(source)) if isinstance(source, (str, bytes)) else json.load(source)
    else:
        data = source
    n = int(data["dimension"])
    box = data["box"]
    if len(box) != n:
        raise ValueError("box must list one [lo, hi] pair per dimension")
    lo = tuple(float(b[0]) for b in box)
    hi = tuple(float(b[1]) for b in box)
    jumps = []
    pj_parts = []
    for spec in data.get("jumps", []):
        gb = spec["guard_box"]
        g_lo = tuple(float(b[0]) for b in gb)
        g_hi = tuple(float(b[1]) for b in gb)
        r = spec["reset"]
        if r.get("kind") != "affine":
            raise ValueError("only affine resets are supported in JSON definitions")
        reset, A, c = _affine_reset(r["matrix"], r["offset"])
        jumps.append(Jump(g_lo, g_hi, reset))
        pj_parts.append((g_lo, g_hi, A, c))

    def point_jumps(x):
        out = []
        for g_lo, g_hi, A, c in pj_parts:
            if all(a - 1e-12 <= xi <= b + 1e-12 for a, xi, b in zip(g_lo, x, g_hi)):
                out.append(tuple(sum(aij * xj for aij, xj in zip(row, x)) + ci for row, ci in zip(A, c)))
        return out

    return HybridSystem(
        dim=n,
        window_lo=lo,
        window_hi=hi,
        vel_bound=tuple(1.0 for _ in range(n)),
        flow=None,
        jumps=tuple(jumps),
        point_jumps=point_jumps,
        name=data.get("name", "json-system"),
    )

"""Trajectory simulation with event detection and Zeno diagnosis.

Flows integrate with a fixed-step fourth-order scheme, selecting, at each
step, the midpoint of the system's velocity box (a deterministic choice of
realizer for nondeterministic flows).  Events are located by bisecting the
step on which the state leaves the flow domain; the landing state is then
offered to the jump guards.  A trajectory ends at t_max, at the transition
budget, out of the window (reported via OutOfWindow, not clipped), stuck
(no flow and no jump applies), or at a detected Zeno accumulation.

After an accumulation is detected the simulator can hop to the
extrapolated limit state and continue (the kick applies there); the hop is
recorded as one synthetic segment covering the tail of infinitely many
real ones.  Disable with continue_past_zeno=False to keep the trajectory a
faithful finite-transition sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .hybrid import HybridSystem

_SELF_LOOP_EPS = 1e-13


class OutOfWindow(Exception):
    """The trajectory left the grid window; carries the partial trajectory."""

    def __init__(self, trajectory, report):
        super().__init__("trajectory left the analysis window")
        self.trajectory = trajectory
        self.report = report


@dataclass
class Segment:
    kind: str  # "flow" or "jump"
    t0: float
    t1: float
    x0: tuple
    x1: tuple
    samples: list = field(default_factory=list)  # (t, state) pairs on flow segments

    @property
    def duration(self) -> float:
        return self.t1 - self.t0


@dataclass
class Trajectory:
    segments: list
    total_time: float
    transition_count: int
    ended: str = ""  # t_max | max_transitions | zeno | stuck | out_of_window

    def states(self):
        for seg in self.segments:
            if seg.samples:
                for _, x in seg.samples:
                    yield x
            else:
                yield seg.x0
                yield seg.x1

    def jump_segments(self):
        return [s for s in self.segments if s.kind == "jump"]


@dataclass
class ZenoReport:
    is_zeno: bool
    kind: Optional[str] = None  # "accumulating-bounces" | "chattering"
    zeno_time: Optional[float] = None
    zeno_point: Optional[tuple] = None
    jump_count_in_window: int = 0

    def to_dict(self) -> dict:
        return {
            "is_zeno": self.is_zeno,
            "kind": self.kind,
            "zeno_time": self.zeno_time,
            "zeno_point": list(self.zeno_point) if self.zeno_point is not None else None,
            "jump_count_in_window": self.jump_count_in_window,
        }


def _midpoint_velocity(h: HybridSystem, x: tuple):
    v = h.flow(x, x)
    if v is None:
        return None
    return tuple((a + b) / 2.0 for a, b in zip(v[0], v[1]))


def _rk4(h: HybridSystem, x: tuple, dt: float):
    f = lambda y: _midpoint_velocity(h, y)
    k1 = f(x)
    if k1 is None:
        return None
    k2 = f(tuple(a + dt / 2 * b for a, b in zip(x, k1)))
    if k2 is None:
        return None
    k3 = f(tuple(a + dt / 2 * b for a, b in zip(x, k2)))
    if k3 is None:
        return None
    k4 = f(tuple(a + dt * b for a, b in zip(x, k3)))
    if k4 is None:
        return None
    return tuple(a + dt / 6 * (p + 2 * q + 2 * r + s) for a, p, q, r, s in zip(x, k1, k2, k3, k4))


def _in_window(h: HybridSystem, x: tuple, tol: float = 1e-12) -> bool:
    return all(a - tol <= xi <= b + tol for a, xi, b in zip(h.window_lo, x, h.window_hi))


def _point_successors(h: HybridSystem, x: tuple):
    if h.point_jumps is not None:
        return [tuple(s) for s in h.point_jumps(x)]
    out = []
    for j in h.jumps:
        if not hasattr(j, "guard_lo"):
            continue
        if all(a - 1e-12 <= xi <= b + 1e-12 for a, xi, b in zip(j.guard_lo, x, j.guard_hi)):
            img = j.image(x, x)
            if img is not None:
                out.append(tuple((a + b) / 2.0 for a, b in zip(img[0], img[1])))
    return out


def _snap_to_guards(h: HybridSystem, x: tuple, tol: float = 1e-8) -> tuple:
    """Snap coordinates onto nearby guard faces so extrapolated limit states
    can fire point guards exactly."""
    faces = [set() for _ in range(h.dim)]
    for j in h.jumps:
        if not hasattr(j, "guard_lo"):
            continue
        for d in range(h.dim):
            faces[d].add(j.guard_lo[d])
            faces[d].add(j.guard_hi[d])
    out = list(x)
    for d, xs in enumerate(faces):
        for fval in xs:
            if math.isfinite(fval) and abs(out[d] - fval) <= tol:
                out[d] = fval
    return tuple(out)


def _geometric_limit(tail: Sequence[tuple]) -> Optional[tuple]:
    """Extrapolated accumulation point of a geometric-ish state sequence."""
    if len(tail) < 3:
        return tail[-1] if tail else None
    a, b, c = tail[-3], tail[-2], tail[-1]
    d1 = max(abs(p - q) for p, q in zip(b, a))
    d2 = max(abs(p - q) for p, q in zip(c, b))
    if d2 <= _SELF_LOOP_EPS:
        return c
    if d1 <= _SELF_LOOP_EPS or d2 >= d1:
        return c
    r = d2 / d1
    scale = r / (1.0 - r)
    return tuple(p + (p - q) * scale for p, q in zip(c, b))


def _classify_zeno(dwells: Sequence[float], window: int, tol_time: float):
    """Return (kind, remaining_time_estimate) or None on the last `window` dwells."""
    if len(dwells) < window:
        return None
    tail = list(dwells[-window:])
    if all(d <= tol_time for d in tail):
        return "chattering", 0.0
    if any(d <= tol_time for d in tail):
        return None
    if all(b < a for a, b in zip(tail, tail[1:])):
        ratios = [b / a for a, b in zip(tail, tail[1:])]
        r = math.exp(sum(math.log(q) for q in ratios) / len(ratios))
        if r < 0.999:
            return "accumulating-bounces", tail[-1] * r / (1.0 - r)
    return None


def detect_zeno(trajectory: Trajectory, window: int = 8, tol_time: float = 1e-6) -> ZenoReport:
    """Post-hoc Zeno diagnosis: the last `window` jumps must show dwell times
    that are all (near) zero (chattering) or strictly decreasing with a
    convergent geometric tail (accumulating bounces)."""
    if window < 3:
        raise ValueError("window must be at least 3")
    dwells = []
    targets = []
    t_flow = 0.0
    t_end = 0.0
    for seg in trajectory.segments:
        if seg.kind == "flow":
            t_flow += seg.duration
        else:
            dwells.append(t_flow)
            targets.append(seg.x1)
            t_flow = 0.0
        t_end = seg.t1
    verdict = _classify_zeno(dwells, window, tol_time)
    if verdict is None:
        return ZenoReport(False, jump_count_in_window=min(len(dwells), window))
    kind, remaining = verdict
    point = _geometric_limit(targets[-window:])
    return ZenoReport(True, kind, t_end + remaining, point, window)


def simulate(
    h: HybridSystem,
    start: Sequence[float],
    t_max: float,
    max_transitions: int = 50,
    step: float | None = None,
    event_tol: float = 1e-12,
    zeno_window: int = 8,
    zeno_tol_time: float = 1e-6,
    continue_past_zeno: bool = True,
    max_samples: int | None = None,
):
    """Simulate one trajectory; returns (Trajectory, ZenoReport).

    Raises OutOfWindow when the state leaves the window box while still able
    to flow; the exception carries the partial trajectory.
    """
    x = tuple(float(v) for v in start)
    if not _in_window(h, x):
        raise ValueError(f"start state {x} outside the window")
    if step is None:
        step = min(0.01, 0.1 * min((b - a) / vb for a, b, vb in zip(h.window_lo, h.window_hi, h.vel_bound) if vb > 0))
    t = 0.0
    segments: list[Segment] = []
    dwells: list[float] = []
    jump_targets: list[tuple] = []
    t_since_jump = 0.0
    transitions = 0
    report = ZenoReport(False)
    ended = ""
    n_samples = 0

    def finish(reason):
        return Trajectory(segments, t, transitions, ended=reason), report

    while True:
        if transitions >= max_transitions:
            return finish("max_transitions")
        if t >= t_max - 1e-15:
            return finish("t_max")

        succ = _point_successors(h, x)
        if succ:
            nxt = succ[0]
            segments.append(Segment("jump", t, t, x, nxt))
            transitions += 1
            dwells.append(t_since_jump)
            jump_targets.append(nxt)
            t_since_jump = 0.0
            if max(abs(a - b) for a, b in zip(nxt, x)) <= _SELF_LOOP_EPS:
                x = nxt
                return finish("stuck")
            x = nxt
            verdict = _classify_zeno(dwells, zeno_window, zeno_tol_time)
            if verdict is not None:
                kind, remaining = verdict
                point = _snap_to_guards(h, _geometric_limit(jump_targets[-zeno_window:]) or x)
                report = ZenoReport(True, kind, t + remaining, point, zeno_window)
                if not continue_past_zeno:
                    return finish("zeno")
                hop_kind = "flow" if remaining > 0 else "jump"
                segments.append(Segment(hop_kind, t, t + remaining, x, point))
                t = t + remaining
                x = point
                dwells.clear()
                jump_targets.clear()
            continue

        if h.flow is None:
            return finish("stuck")

        # flow segment: integrate until an event, the window edge, or t_max
        seg_t0 = t
        seg_x0 = x
        samples = [(t, x)]
        seg_end_reason = None
        while True:
            if t >= t_max - 1e-15:
                seg_end_reason = "t_max"
                break
            dt = min(step, t_max - t)
            x_new = _rk4(h, x, dt)
            if x_new is not None and not _in_window(h, x_new):
                # bisect onto the window edge, report (never clip silently)
                lo_t, hi_t = 0.0, dt
                for _ in range(100):
                    mid = (lo_t + hi_t) / 2
                    x_mid = _rk4(h, x, mid)
                    if x_mid is not None and _in_window(h, x_mid):
                        lo_t = mid
                    else:
                        hi_t = mid
                    if hi_t - lo_t <= event_tol:
                        break
                x_edge = _rk4(h, x, lo_t) if lo_t > 0 else x
                t += lo_t
                if t > seg_t0:
                    samples.append((t, x_edge))
                    segments.append(Segment("flow", seg_t0, t, seg_x0, x_edge, samples))
                    transitions += 1
                raise OutOfWindow(Trajectory(segments, t, transitions, ended="out_of_window"), report)
            if x_new is None or _midpoint_velocity(h, x_new) is None:
                # left the flow domain within this step: bisect the exit time
                lo_t, hi_t = 0.0, dt
                for _ in range(100):
                    mid = (lo_t + hi_t) / 2
                    x_mid = _rk4(h, x, mid)
                    if x_mid is not None and _midpoint_velocity(h, x_mid) is not None:
                        lo_t = mid
                    else:
                        hi_t = mid
                    if hi_t - lo_t <= event_tol:
                        break
                x_evt = _rk4(h, x, lo_t) if lo_t > 0 else x
                t += lo_t
                x = x_evt
                samples.append((t, x))
                seg_end_reason = "event"
                break
            t += dt
            x = x_new
            if max_samples is None or n_samples < max_samples:
                samples.append((t, x))
                n_samples += 1
        if t > seg_t0:
            segments.append(Segment("flow", seg_t0, t, seg_x0, x, samples))
            transitions += 1
            t_since_jump += t - seg_t0
        if seg_end_reason == "t_max":
            return finish("t_max")
        # event: hand the snapped boundary state to the guards
        x = _snap_to_guards(h, x, tol=1e-9)
        if not _point_successors(h, x):
            return finish("stuck")

"""Reference trajectories: hover, step, quintic segments and a figure-8.

All trajectories are immutable.  They share a small interface
(``duration``, ``length`` and :func:`sample_reference`) so the closed
loop does not care which kind it is following.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import integrate

from .frames import wrap_angle


class TrajectoryPoint(NamedTuple):
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    yaw: float
    yaw_rate: float = 0.0


# ---------------------------------------------------------------------------
# quintic segments


def _basis(t: float, order: int) -> np.ndarray:
    """Row of d^order/dt^order [1, t, ..., t^5]."""
    row = np.zeros(6)
    for i in range(order, 6):
        row[i] = math.factorial(i) / math.factorial(i - order) * t ** (i - order)
    return row


@dataclass(frozen=True)
class PolySegment:
    """Quintic per axis: ``coeffs[axis, i]`` multiplies ``t**i``."""

    coeffs: np.ndarray
    duration: float

    def __post_init__(self):
        if not self.duration > 0.0:
            raise ValueError("segment duration must be positive")

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        return self.coeffs @ _basis(t, order)


def quintic_segment(start, end, duration: float) -> PolySegment:
    """Unique quintic matching (position, velocity, acceleration) at both ends.

    ``start`` and ``end`` are ``(p, v, a)`` triples; each entry may be a
    scalar or a vector, all of the same length.

    Examples
    --------
    >>> seg = quintic_segment((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 2.0)
    >>> float(seg.evaluate(1.0)[0]), float(seg.evaluate(1.0, 1)[0])
    (0.5, 0.9375)
    """
    if not duration > 0.0:
        raise ValueError("segment duration must be positive")
    *start, = np.broadcast_arrays(*[np.atleast_1d(np.asarray(b, dtype=float)) for b in (*start, *end)])
    start, end = start[:3], start[3:]
    M = np.array([_basis(0.0, 0), _basis(0.0, 1), _basis(0.0, 2),
                  _basis(duration, 0), _basis(duration, 1), _basis(duration, 2)])
    rhs = np.stack([*start, *end])
    return PolySegment(np.linalg.solve(M, rhs).T, float(duration))


# ---------------------------------------------------------------------------
# trajectories


class Trajectory:
    """Common base; subclasses implement ``_evaluate`` on [0, duration]."""

    duration: float

    def _evaluate(self, t: float) -> TrajectoryPoint:
        raise NotImplementedError

    @property
    def length(self) -> float:
        """Arc length of the position curve."""
        speed = lambda t: float(np.linalg.norm(self._evaluate(t).velocity))  # noqa: E731
        breaks = getattr(self, "breaks", (0.0, self.duration))
        return float(sum(integrate.quad(speed, a, b, limit=200)[0] for a, b in zip(breaks[:-1], breaks[1:])))


@dataclass(frozen=True)
class ReferenceTrajectory(Trajectory):
    """Chain of quintic segments over (x, y, z, yaw)."""

    segments: tuple

    def __post_init__(self):
        if not self.segments:
            raise ValueError("trajectory needs at least one segment")

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def breaks(self) -> tuple:
        return tuple(np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])]).tolist())

    def _evaluate(self, t: float) -> TrajectoryPoint:
        breaks = self.breaks
        i = min(int(np.searchsorted(breaks, t, side="right")) - 1, len(self.segments) - 1)
        seg = self.segments[max(i, 0)]
        tau = t - breaks[max(i, 0)]
        p, v, a = seg.evaluate(tau, 0), seg.evaluate(tau, 1), seg.evaluate(tau, 2)
        return TrajectoryPoint(p[:3], v[:3], a[:3], float(wrap_angle(p[3])), float(v[3]))


@dataclass(frozen=True)
class StepReference(Trajectory):
    """Position jump from ``start`` to ``end`` at ``t_step``; not smooth by design."""

    start: tuple
    end: tuple
    t_step: float
    duration: float
    yaw: float = 0.0

    def _evaluate(self, t: float) -> TrajectoryPoint:
        p = np.array(self.start if t < self.t_step else self.end, dtype=float)
        return TrajectoryPoint(p, np.zeros(3), np.zeros(3), self.yaw)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.end, self.start)))


@dataclass(frozen=True)
class Figure8(Trajectory):
    """Gerono lemniscate with sinusoidal height, repeated ``laps`` times.

    x = A sin(w t), y = B sin(2 w t) / 2, z = z0 + h sin(w t), w = 2 pi / T.
    """

    A: float
    B: float
    height_amp: float
    period: float
    center: tuple = (0.0, 0.0, 1.0)
    yaw_follow: bool = True
    laps: int = 1

    def __post_init__(self):
        if min(self.A, self.B, self.period) <= 0.0 or self.height_amp < 0.0 or self.laps < 1:
            raise ValueError("figure-8 needs positive size, period and laps")

    @property
    def duration(self) -> float:
        return self.period * self.laps

    def _derivs(self, t: float):
        w = 2.0 * math.pi / self.period
        s1, c1 = math.sin(w * t), math.cos(w * t)
        s2, c2 = math.sin(2 * w * t), math.cos(2 * w * t)
        A, B, h = self.A, self.B, self.height_amp
        p = np.array([A * s1, 0.5 * B * s2, h * s1]) + self.center
        v = np.array([A * w * c1, B * w * c2, h * w * c1])
        a = np.array([-A * w * w * s1, -2.0 * B * w * w * s2, -h * w * w * s1])
        j = np.array([-A * w**3 * c1, -4.0 * B * w**3 * c2, -h * w**3 * c1])
        return p, v, a, j

    def _evaluate(self, t: float) -> TrajectoryPoint:
        p, v, a, _ = self._derivs(t)
        if not self.yaw_follow:
            return TrajectoryPoint(p, v, a, 0.0, 0.0)
        vh2 = v[0] ** 2 + v[1] ** 2
        yaw = math.atan2(v[1], v[0])
        rate = (v[0] * a[1] - v[1] * a[0]) / vh2 if vh2 > 1e-12 else 0.0
        return TrajectoryPoint(p, v, a, yaw, rate)

    @property
    def breaks(self) -> tuple:
        return tuple(np.linspace(0.0, self.duration, 4 * self.laps + 1).tolist())

    @property
    def v_max(self) -> float:
        return self._peak(1)

    @property
    def a_max(self) -> float:
        return self._peak(2)

    def _peak(self, order: int) -> float:
        # dense grid, then polish the best sample with a bounded 1-D search
        from scipy.optimize import minimize_scalar

        ts = np.linspace(0.0, self.period, 4001)
        f = lambda t: -float(np.linalg.norm(self._derivs(t)[order]))  # noqa: E731
        vals = np.array([f(t) for t in ts])
        i = int(np.argmin(vals))
        lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]
        res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        return float(max(-res.fun, -vals[i]))


FIGURE8_DEFAULTS = dict(width=3.434, lobe=1.589, height_amp=0.25, period=9.07)


def figure8(width: float = FIGURE8_DEFAULTS["width"], height_amp: float = FIGURE8_DEFAULTS["height_amp"],
            period: float = FIGURE8_DEFAULTS["period"], yaw_follow: bool = True, *,
            lobe: float = FIGURE8_DEFAULTS["lobe"], center=(0.0, 0.0, 1.0), laps: int = 1) -> Figure8:
    """Figure-8 of total x extent ``width`` and y extent ``lobe``.

    The defaults give a peak speed of 1.63 m/s over a 9.07 s lap; with
    that speed bound a single Gerono lap cannot be longer than about
    10.15 m, which is what the defaults achieve.
    """
    if min(width, lobe, period) <= 0.0 or height_amp < 0.0:
        raise ValueError("figure-8 parameters must be positive")
    return Figure8(0.5 * width, lobe, height_amp, period, tuple(center), yaw_follow, laps)


def hover_reference(p=(0.0, 0.0, 1.0), yaw: float = 0.0, duration: float = 10.0) -> ReferenceTrajectory:
    rest = (np.array([*p, yaw], dtype=float), np.zeros(4), np.zeros(4))
    return ReferenceTrajectory((quintic_segment(rest, rest, duration),))


def step_reference(start=(0.0, 0.0, 1.0), end=(1.0, 0.0, 1.0), t_step: float = 5.0,
                   duration: float = 20.0, yaw: float = 0.0) -> StepReference:
    if not 0.0 <= t_step <= duration:
        raise ValueError("step time must lie within the duration")
    return StepReference(tuple(map(float, start)), tuple(map(float, end)), float(t_step), float(duration), yaw)


def from_waypoints(t, xyz, yaw=None) -> ReferenceTrajectory:
    """Quintic chain through timed waypoints, at rest at both ends.

    Interior velocities are central-difference slopes and interior
    accelerations are zero, which keeps the chain C2.
    """
    t = np.asarray(t, dtype=float)
    xyz = np.asarray(xyz, dtype=float).reshape(t.size, 3)
    yaw = np.zeros(t.size) if yaw is None else np.unwrap(np.asarray(yaw, dtype=float))
    if t.size < 2 or np.any(np.diff(t) <= 0.0):
        raise ValueError("waypoint times must be strictly increasing (>= 2 points)")
    if t[0] != 0.0:
        raise ValueError("waypoints must start at t = 0")
    q = np.column_stack([xyz, yaw])
    vel = np.zeros_like(q)
    vel[1:-1] = (q[2:] - q[:-2]) / (t[2:] - t[:-2])[:, None]
    acc = np.zeros_like(q)
    segs = [quintic_segment((q[i], vel[i], acc[i]), (q[i + 1], vel[i + 1], acc[i + 1]), t[i + 1] - t[i])
            for i in range(t.size - 1)]
    return ReferenceTrajectory(tuple(segs))


def read_waypoints(path) -> ReferenceTrajectory:
    """Load a ``t,x,y,z,yaw`` CSV (header required)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != ["t", "x", "y", "z", "yaw"]:
            raise ValueError(f"{path}: expected header t,x,y,z,yaw, got {header}")
        rows = np.array([[float(v) for v in row] for row in reader if row])
    return from_waypoints(rows[:, 0], rows[:, 1:4], rows[:, 4])


def write_waypoints(path, t, xyz, yaw) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z", "yaw"])
        for row in np.column_stack([t, xyz, yaw]):
            writer.writerow([repr(float(v)) for v in row])


def sample_reference(traj: Trajectory, t: float) -> TrajectoryPoint:
    """Reference at time ``t``; after the end the final position is held at rest."""
    if t < 0.0:
        raise ValueError("reference time must be non-negative")
    if t <= traj.duration:
        return traj._evaluate(float(t))
    end = traj._evaluate(traj.duration)
    return TrajectoryPoint(end.position, np.zeros(3), np.zeros(3), end.yaw, 0.0)


class FeasibilityReport(NamedTuple):
    feasible: bool
    v_peak: float
    a_peak: float
    violations: tuple  # (kind, t_start, t_end)


def _windows(times, mask):
    out = []
    edges = np.flatnonzero(np.diff(mask.astype(int)))
    starts = [0] if mask[0] else []
    starts += [e + 1 for e in edges if not mask[e]]
    for s in starts:
        stop = s
        while stop + 1 < mask.size and mask[stop + 1]:
            stop += 1
        out.append((float(times[s]), float(times[stop])))
    return out


def check_feasibility(traj: Trajectory, v_max: float, a_max: float, samples: int = 10_001) -> FeasibilityReport:
    """Dense-sample speed and acceleration against the limits.

    Each violation is reported as ``(kind, first_time, last_time)`` over
    the offending samples.
    """
    times = np.linspace(0.0, traj.duration, samples)
    pts = [traj._evaluate(float(t)) for t in times]
    speed = np.array([np.linalg.norm(p.velocity) for p in pts])
    accel = np.array([np.linalg.norm(p.acceleration) for p in pts])
    violations = [("velocity", a, b) for a, b in _windows(times, speed > v_max)]
    violations += [("acceleration", a, b) for a, b in _windows(times, accel > a_max)]
    return FeasibilityReport(not violations, float(speed.max()), float(accel.max()), tuple(violations))

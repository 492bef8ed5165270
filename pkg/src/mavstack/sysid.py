"""Batch system identification from recorded flights.

Covers the whole pipeline used to bring up a new airframe: transmitter
scaling (counts to SI units), first- and second-order attitude / rate
models fitted by output error, the autopilot dead zone and the trim
(balancing) offset.

Fits are deterministic: a fixed multi-start grid seeds a damped
Gauss-Newton iteration on the simulation error, and the model response
is computed from an exact zero-order-hold discretization.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy import linalg, signal

CHANNELS = ("phi", "theta", "psidot", "vz")
COMMAND_LIMIT = 1024.0
CSV_HEADER = ("t", "c_phi", "c_theta", "c_psidot", "c_vz", "phi", "theta", "psi",
              "px", "py", "pz", "vx", "vy", "vz_meas")

FIRST_ORDER_TAU_STARTS = (0.05, 0.1, 0.2, 0.5, 1.0)
SECOND_ORDER_OMEGA_STARTS = (1.0, 2.5, 5.0, 10.0, 25.0, 50.0)
SECOND_ORDER_ZETA_STARTS = (0.3, 0.7, 1.5, 3.0)


class IdentificationError(ValueError):
    """Raised when a fit cannot be carried out or does not converge."""

    def __init__(self, message: str, best_residual: float | None = None):
        super().__init__(message)
        self.best_residual = best_residual


class ActuatorCommand(NamedTuple):
    c_phi: float = 0.0
    c_theta: float = 0.0
    c_psi_dot: float = 0.0
    c_vz: float = 0.0

    def clipped(self) -> "ActuatorCommand":
        return ActuatorCommand(*np.clip(self, -COMMAND_LIMIT, COMMAND_LIMIT).tolist())


@dataclass(frozen=True)
class ScaleParams:
    """Counts-to-SI gains: rad, rad, rad/s and m/s per transmitter count."""

    lambda_phi: float = 8.65e-4
    lambda_theta: float = 8.44e-4
    lambda_psi_dot: float = 2.24e-3
    lambda_vz: float = 2.65e-3

    def __post_init__(self):
        if min(self.as_array()) <= 0.0:
            raise ValueError("scale parameters must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda_phi, self.lambda_theta, self.lambda_psi_dot, self.lambda_vz])


@dataclass(frozen=True)
class FirstOrderModel:
    """y/u = k / (tau s + 1)."""

    k: float
    tau: float

    def __post_init__(self):
        if not (self.k > 0 and self.tau > 0):
            raise ValueError("first-order model needs k > 0 and tau > 0")

    def discretize(self, dt: float):
        a = math.exp(-dt / self.tau)
        return np.array([[a]]), np.array([[self.k * (1.0 - a)]])

    def transfer_function(self):
        """Return (b0, a0) of b0 / (s + a0)."""
        return self.k / self.tau, 1.0 / self.tau


@dataclass(frozen=True)
class SecondOrderModel:
    """y/u = k w^2 / (s^2 + 2 zeta w s + w^2)."""

    k: float
    zeta: float
    omega: float

    def __post_init__(self):
        if not (self.k > 0 and self.zeta > 0 and self.omega > 0):
            raise ValueError("second-order model needs k, zeta, omega > 0")

    def continuous(self):
        return _companion(self.k, self.zeta, self.omega)

    def discretize(self, dt: float):
        return _zoh(*self.continuous(), dt)

    def transfer_function(self):
        """Return (b0, a1, a0) of b0 / (s^2 + a1 s + a0)."""
        w2 = self.omega ** 2
        return self.k * w2, 2.0 * self.zeta * self.omega, w2


@dataclass(frozen=True)
class DeadZone:
    lower: float = 0.0
    upper: float = 0.0

    def __post_init__(self):
        if not self.lower <= 0.0 <= self.upper:
            raise ValueError("dead zone must satisfy lower <= 0 <= upper")

    def apply(self, c):
        c = np.asarray(c, dtype=float)
        out = np.where((c >= self.lower) & (c <= self.upper), 0.0, c)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TrimOffset:
    c_phi: float = 0.0
    c_theta: float = 0.0
    c_psi_dot: float = 0.0
    c_vz: float = 0.0
    bound: float = field(default=200.0, compare=False)

    def __post_init__(self):
        if np.abs(self.as_array()).max() > self.bound:
            raise ValueError(f"trim offset exceeds the {self.bound} count sanity bound")

    def as_array(self) -> np.ndarray:
        return np.array([self.c_phi, self.c_theta, self.c_psi_dot, self.c_vz])


@dataclass
class FlightLog:
    """Time-aligned commands (counts) and measured vehicle response (SI)."""

    t: np.ndarray
    commands: np.ndarray
    attitude: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    psi_dot: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        n = self.t.size
        self.commands = np.asarray(self.commands, dtype=float).reshape(n, 4)
        self.attitude = np.asarray(self.attitude, dtype=float).reshape(n, 3)
        self.position = np.asarray(self.position, dtype=float).reshape(n, 3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(n, 3)
        if n < 2:
            raise ValueError("flight log needs at least 2 records")
        if np.any(np.diff(self.t) <= 0.0):
            raise ValueError("flight log timestamps must be strictly increasing")
        if self.psi_dot is None:
            self.psi_dot = np.gradient(np.unwrap(self.attitude[:, 2]), self.t)
        else:
            self.psi_dot = np.asarray(self.psi_dot, dtype=float).reshape(n)

    def __len__(self):
        return self.t.size

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def dt(self) -> float:
        steps = np.diff(self.t)
        if np.ptp(steps) > 1e-6 * steps.mean():
            raise IdentificationError("log is not uniformly sampled")
        return float(steps.mean())

    def measured(self) -> np.ndarray:
        """Per-channel response columns (phi, theta, psi_dot, vz)."""
        return np.column_stack([self.attitude[:, 0], self.attitude[:, 1], self.psi_dot, self.velocity[:, 2]])

    def to_csv(self, path) -> None:
        path = Path(path)
        rows = np.column_stack([self.t, self.commands, self.attitude, self.position, self.velocity])
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in rows:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "FlightLog":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header[: len(CSV_HEADER)] != CSV_HEADER:
                raise ValueError(f"unexpected flight log header {header}")
            data = np.array([[float(v) for v in row[: len(CSV_HEADER)]] for row in reader if row])
        return cls(data[:, 0], data[:, 1:5], data[:, 5:8], data[:, 8:11], data[:, 11:14])


# ---------------------------------------------------------------------------
# scaling


def _gauss_newton(
    residual: Callable[[np.ndarray], np.ndarray],
    q0: np.ndarray,
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = 100,
    rtol: float = 1e-13,
):
    """Gauss-Newton with step halving.  Returns (q, cost, converged)."""
    q = np.asarray(q0, dtype=float)
    r = residual(q)
    cost = float(r @ r)
    for _ in range(max_iter):
        J = jacobian(q) if jacobian is not None else _fd_jacobian(residual, q, r)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        alpha = 1.0
        while alpha > 1e-6:
            q_new = q + alpha * step
            r_new = residual(q_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                break
            alpha *= 0.5
        else:
            # no descent along the GN direction: stationary to working precision
            return q, cost, True
        decrease = cost - cost_new
        q, r, cost = q_new, r_new, cost_new
        if decrease <= rtol * max(cost, 1e-300) or np.abs(alpha * step).max() < 1e-12:
            return q, cost, True
    return q, cost, False


def _fd_jacobian(residual, q, r0, rel_step=1e-6):
    cols = []
    for i in range(q.size):
        h = rel_step * max(1.0, abs(q[i]))
        dq = np.zeros_like(q)
        dq[i] = h
        cols.append((residual(q + dq) - residual(q - dq)) / (2.0 * h))
    return np.column_stack(cols)


def estimate_scales(log: FlightLog) -> ScaleParams:
    """Least-squares gains mapping commands to the measured channel response.

    Solves the stacked four-channel problem ``min ||z - diag(lambda) u||^2``
    with Gauss-Newton; the problem is linear, so one iteration reaches
    the optimum.
    """
    u = log.commands
    z = log.measured()
    energy = (u ** 2).sum(axis=0)
    for name, e in zip(CHANNELS, energy):
        if e <= 0.0:
            raise IdentificationError(f"channel not excited: {name}")

    def residual(lam):
        return (z - u * lam).ravel(order="F")

    def jacobian(lam):
        n = u.shape[0]
        J = np.zeros((4 * n, 4))
        for j in range(4):
            J[j * n:(j + 1) * n, j] = -u[:, j]
        return J

    lam, _, _ = _gauss_newton(residual, np.zeros(4), jacobian, max_iter=3)
    if np.any(lam <= 0.0):
        raise IdentificationError(f"non-positive scale estimate {lam}")
    return ScaleParams(*lam.tolist())


# ---------------------------------------------------------------------------
# linear model fitting


def _companion(k, zeta, omega):
    w2 = omega ** 2
    A = np.array([[0.0, 1.0], [-w2, -2.0 * zeta * omega]])
    B = np.array([[0.0], [k * w2]])
    return A, B


def _zoh(A, B, dt):
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = linalg.expm(M * dt)
    return E[:n, :n], E[:n, n:]


def simulate_discrete(Ad, Bd, u, x0) -> np.ndarray:
    """First state of x[k+1] = Ad x[k] + Bd u[k] for every sample, starting at x0."""
    u = np.asarray(u, dtype=float)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    C = np.zeros((1, Ad.shape[0]))
    C[0, 0] = 1.0
    num, den = signal.ss2tf(Ad, Bd, C, np.zeros((1, 1)))
    y = signal.lfilter(num[0], den, u)
    if np.any(x0):
        num0, _ = signal.ss2tf(Ad, (Ad @ x0).reshape(-1, 1), C, np.zeros((1, 1)))
        impulse = np.zeros_like(u)
        impulse[0] = 1.0
        y = y + signal.lfilter(num0[0], den, impulse)
        y[0] += x0[0]
    return y


def _check_series(u, y, dt):
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape or u.ndim != 1:
        raise IdentificationError("input and output must be 1-D series of equal length")
    if u.size < 10:
        raise IdentificationError("need at least 10 samples")
    if not dt > 0:
        raise IdentificationError("dt must be positive")
    if not np.all(np.isfinite(u)) or not np.all(np.isfinite(y)):
        raise IdentificationError("series contain non-finite values")
    if np.ptp(u) == 0.0:
        raise IdentificationError("insufficient excitation: input is constant")
    return u, y


def _multistart(residual, starts):
    best = None
    for q0 in starts:
        q, cost, ok = _gauss_newton(residual, q0)
        if best is None or cost < best[1]:
            best = (q, cost, ok)
    q, cost, ok = best
    if not ok:
        raise IdentificationError("Gauss-Newton did not converge", best_residual=math.sqrt(cost))
    return q, cost


def _gain_for(response_per_unit_gain, y, free):
    g = response_per_unit_gain
    denom = float(g @ g)
    return float(g @ (y - free)) / denom if denom > 0 else 1.0


def fit_first_order(u, y, dt: float) -> FirstOrderModel:
    """Output-error fit of ``tau y' + y = k u`` (no dead time)."""
    u, y = _check_series(u, y, dt)
    y0 = y[0]

    def simulate(k, tau):
        a = math.exp(-dt / tau)
        return simulate_discrete(np.array([[a]]), np.array([[k * (1.0 - a)]]), u, [y0])

    def residual(q):
        if abs(q[1]) > 12.0:
            return np.full_like(y, np.inf)
        return y - simulate(q[0], math.exp(q[1]))

    starts = []
    for tau in FIRST_ORDER_TAU_STARTS:
        free = simulate(0.0, tau)
        k0 = _gain_for(simulate(1.0, tau) - free, y, free)
        starts.append(np.array([k0, math.log(tau)]))
    q, _ = _multistart(residual, starts)
    return FirstOrderModel(float(q[0]), math.exp(q[1]))


def fit_second_order(u, y, dt: float) -> SecondOrderModel:
    """Output-error fit of ``y'' + 2 zeta w y' + w^2 y = k w^2 u``."""
    u, y = _check_series(u, y, dt)
    x0 = [y[0], 0.0]

    def simulate(k, zeta, omega):
        Ad, Bd = _zoh(*_companion(k, zeta, omega), dt)
        return simulate_discrete(Ad, Bd, u, x0)

    def residual(q):
        if np.abs(q[1:]).max() > 12.0:
            return np.full_like(y, np.inf)
        return y - simulate(q[0], math.exp(q[1]), math.exp(q[2]))

    starts = []
    for omega in SECOND_ORDER_OMEGA_STARTS:
        for zeta in SECOND_ORDER_ZETA_STARTS:
            free = simulate(0.0, zeta, omega)
            k0 = _gain_for(simulate(1.0, zeta, omega) - free, y, free)
            starts.append(np.array([k0, math.log(zeta), math.log(omega)]))
    q, _ = _multistart(residual, starts)
    return SecondOrderModel(float(q[0]), math.exp(q[1]), math.exp(q[2]))


def tf_to_params(b0: float, a1: float | None, a0: float):
    """Canonical parameters of ``b0/(s + a0)`` (``a1=None``) or ``b0/(s^2 + a1 s + a0)``."""
    if not a0 > 0:
        raise ValueError("unstable denominator: a0 must be positive")
    if a1 is None:
        return FirstOrderModel(b0 / a0, 1.0 / a0)
    if not a1 > 0:
        raise ValueError("unstable denominator: a1 must be positive")
    omega = math.sqrt(a0)
    return SecondOrderModel(b0 / a0, a1 / (2.0 * omega), omega)


def fit_channel(log: FlightLog, channel: str, order: int, scales: ScaleParams | None = None):
    """Fit the model of one channel from a log, inputs converted to SI units first."""
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}")
    idx = CHANNELS.index(channel)
    scales = scales or estimate_scales(log)
    u = log.commands[:, idx] * scales.as_array()[idx]
    y = log.measured()[:, idx]
    if order == 1:
        return fit_first_order(u, y, log.dt)
    if order == 2:
        return fit_second_order(u, y, log.dt)
    raise ValueError("order must be 1 or 2")


# ---------------------------------------------------------------------------
# dead zone and trim


def _levels(commands):
    """Split a command series into runs of constant value -> [(value, start, stop)]."""
    edges = np.flatnonzero(np.diff(commands) != 0.0) + 1
    bounds = np.concatenate([[0], edges, [commands.size]])
    return [(float(commands[a]), a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def detect_dead_zone(sweep: FlightLog, channel: str, motion_threshold: float = 0.02) -> DeadZone:
    """Command interval around neutral that produces no motion.

    ``sweep`` is a monotone staircase on ``channel``; for every level the
    largest velocity change (norm of the linear velocity and yaw rate
    relative to the level's first sample) is compared with
    ``motion_threshold``.  The contiguous block of quiet levels around
    neutral gives the bounds.
    """
    idx = CHANNELS.index(channel)
    levels = _levels(sweep.commands[:, idx])
    values = np.array([lv[0] for lv in levels])
    if np.any(np.diff(values) <= 0) and np.any(np.diff(values) >= 0):
        raise IdentificationError("sweep is not a monotone staircase")
    # linear velocity plus yaw rate, so the yaw channel is observable too
    motion = np.column_stack([sweep.velocity, sweep.psi_dot])
    quiet = []
    for _, a, b in levels:
        dv = motion[a:b] - motion[a]
        quiet.append(float(np.linalg.norm(dv, axis=1).max()) < motion_threshold)

    center = int(np.argmin(np.abs(values)))
    if not quiet[center]:
        return DeadZone(0.0, 0.0)
    lo = hi = center
    while lo > 0 and quiet[lo - 1]:
        lo -= 1
    while hi < len(levels) - 1 and quiet[hi + 1]:
        hi += 1
    if lo == 0 or hi == len(levels) - 1:
        raise IdentificationError("range not bracketed: sweep never leaves the dead zone")
    lower, upper = sorted((values[lo], values[hi]))
    return DeadZone(min(lower, 0.0), max(upper, 0.0))


def _response_for(log: FlightLog, idx: int) -> np.ndarray:
    # roll drives lateral (y) motion, pitch drives forward (x) motion
    return (log.velocity[:, 1], log.velocity[:, 0], log.psi_dot, log.velocity[:, 2])[idx]


def estimate_trim(hover: FlightLog, min_duration: float = 5.0, bound: float = 200.0) -> TrimOffset:
    """Balancing command per channel from near-hover flight.

    For each channel the mean-squared response velocity at every held
    command level is fitted with a quadratic in the command; the vertex
    is the trim.  A non-convex fit falls back to the level with the
    smallest mean absolute velocity.
    """
    if len(hover) < 2 or hover.duration < min_duration:
        raise IdentificationError(f"hover log shorter than {min_duration} s")
    offsets = []
    for idx in range(4):
        response = _response_for(hover, idx)
        levels = _levels(hover.commands[:, idx])
        by_value: dict[float, list[np.ndarray]] = {}
        for value, a, b in levels:
            by_value.setdefault(value, []).append(response[a:b])
        values = np.array(sorted(by_value))
        msv = np.array([np.mean(np.concatenate(by_value[v]) ** 2) for v in values])
        mav = np.array([np.mean(np.abs(np.concatenate(by_value[v]))) for v in values])
        fallback = float(values[np.argmin(mav)])
        if values.size < 3:
            offsets.append(fallback)
            continue
        a2, a1, _ = np.polyfit(values, msv, 2)
        if a2 > 0.0:
            vertex = -a1 / (2.0 * a2)
            offsets.append(float(np.clip(vertex, values[0], values[-1])))
        else:
            offsets.append(fallback)
    return TrimOffset(*offsets, bound=bound)

"""Loosely coupled IMU / odometry fusion.

A 12-state EKF over position, velocity, ZYX Euler attitude and
accelerometer bias.  IMU samples drive the prediction, so the fused
stream comes out at the IMU rate; odometry poses correct it whenever
they arrive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .frames import EulerAngles, euler_rate_matrix, rotation_from_euler, wrap_angle
from .timesync import ImuSample

NF = 12
F_P = slice(0, 3)
F_V = slice(3, 6)
F_ATT = slice(6, 9)
F_B = slice(9, 12)


class OdometryMeasurement(NamedTuple):
    """Pose and velocity from the visual-inertial front end.

    ``variances`` holds per-component variances for position (m^2),
    attitude (rad^2) and velocity ((m/s)^2).
    """

    p: np.ndarray
    attitude: EulerAngles
    v: np.ndarray
    stamp: float
    variances: tuple = (1e-4, 1e-4, 1e-4)


class FusedState(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    stamp: float

    @classmethod
    def initial(cls, p=(0.0, 0.0, 0.0), attitude=(0.0, 0.0, 0.0), stamp: float = 0.0,
                cov_diag=None) -> "FusedState":
        mean = np.zeros(NF)
        mean[F_P] = p
        mean[F_ATT] = attitude
        if cov_diag is None:
            cov_diag = [1e-2] * 3 + [1e-2] * 3 + [1e-3] * 3 + [1e-2] * 3
        return cls(mean, np.diag(np.asarray(cov_diag, dtype=float)), float(stamp))

    @property
    def state_vector(self) -> np.ndarray:
        """(p, v, phi, theta, psi) in the controller's layout."""
        return self.mean[:9].copy()


@dataclass(frozen=True)
class FusionNoise:
    """Per-sample IMU noise, the accelerometer-bias random walk, and small
    random-walk PSDs on position, velocity and attitude covering the
    sample-and-hold integration error."""

    accel_sigma: float = 0.05
    gyro_sigma: float = 0.005
    bias_psd: float = 1e-4
    model_psd: tuple = (1e-4, 1e-3, 1e-5)

    def __post_init__(self):
        if min(self.accel_sigma, self.gyro_sigma, self.bias_psd, *self.model_psd) <= 0.0:
            raise ValueError("fusion noise terms must be positive")

    def model_noise(self, dt: float) -> np.ndarray:
        q_p, q_v, q_a = self.model_psd
        return np.diag([q_p] * 3 + [q_v] * 3 + [q_a] * 3 + [self.bias_psd] * 3) * dt


def _euler_rate_partials(phi, theta, w):
    """d(W(phi, theta) w)/d(phi, theta, psi)."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    _, wy, wz = w
    a = sf * wy + cf * wz
    b = cf * wy - sf * wz
    return np.array([
        [b * st / ct, a / ct**2, 0.0],
        [-a, 0.0, 0.0],
        [b / ct, a * st / ct**2, 0.0],
    ])


def _rotation_partials(att, f):
    """Columns d(R f)/d(phi), d(R f)/d(theta), d(R f)/d(psi)."""
    phi, theta, psi = att
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    Rz = np.array([[cp, -sp, 0], [sp, cp, 0], [0, 0, 1.0]])
    Ry = np.array([[ct, 0, st], [0, 1.0, 0], [-st, 0, ct]])
    Rx = np.array([[1.0, 0, 0], [0, cf, -sf], [0, sf, cf]])
    dRz = np.array([[-sp, -cp, 0], [cp, -sp, 0], [0, 0, 0.0]])
    dRy = np.array([[-st, 0, ct], [0, 0, 0.0], [-ct, 0, -st]])
    dRx = np.array([[0.0, 0, 0], [0, -sf, -cf], [0, cf, -sf]])
    return np.column_stack([Rz @ Ry @ dRx @ f, Rz @ dRy @ Rx @ f, dRz @ Ry @ Rx @ f])


def fusion_propagate(s: FusedState, imu: ImuSample, g: float = 9.81,
                     noise: FusionNoise = FusionNoise()) -> FusedState:
    """Strapdown prediction from ``s.stamp`` to ``imu.stamp``.

    Specific force and body rate are held over the interval, so position
    and velocity are exact for constant world acceleration.
    """
    dt = float(imu.stamp) - s.stamp
    if dt < 0.0:
        raise ValueError(f"IMU sample at {imu.stamp} precedes filter time {s.stamp}")
    if dt == 0.0:
        return s
    x = s.mean
    att = x[F_ATT]
    R = rotation_from_euler(att)
    W = euler_rate_matrix(att[0], att[1])
    f = np.asarray(imu.accel, dtype=float) - x[F_B]
    w = np.asarray(imu.gyro, dtype=float)
    a = R @ f - np.array([0.0, 0.0, g])

    xn = x.copy()
    xn[F_P] = x[F_P] + x[F_V] * dt + 0.5 * a * dt * dt
    xn[F_V] = x[F_V] + a * dt
    xn[F_ATT] = att + W @ w * dt
    xn[8] = wrap_angle(xn[8])

    M = _rotation_partials(att, f)
    F = np.eye(NF)
    F[F_P, F_V] = dt * np.eye(3)
    F[F_P, F_ATT] = 0.5 * dt * dt * M
    F[F_P, F_B] = -0.5 * dt * dt * R
    F[F_V, F_ATT] = dt * M
    F[F_V, F_B] = -dt * R
    F[F_ATT, F_ATT] += dt * _euler_rate_partials(att[0], att[1], w)

    G = np.zeros((NF, 6))
    G[F_P, 0:3] = -0.5 * dt * dt * R
    G[F_V, 0:3] = -dt * R
    G[F_ATT, 3:6] = -dt * W
    Qn = np.diag([noise.accel_sigma**2] * 3 + [noise.gyro_sigma**2] * 3)
    P = F @ s.cov @ F.T + G @ Qn @ G.T + noise.model_noise(dt)
    return FusedState(xn, 0.5 * (P + P.T), float(imu.stamp))


_H = np.zeros((9, NF))
_H[0:3, 0:3] = np.eye(3)  # p
_H[3:6, 6:9] = np.eye(3)  # attitude
_H[6:9, 3:6] = np.eye(3)  # v


def fusion_innovation(s: FusedState, z: OdometryMeasurement) -> np.ndarray:
    """Measurement minus prediction, ordered (p, attitude, v), angles wrapped."""
    zv = np.concatenate([np.asarray(z.p, dtype=float), np.asarray(z.attitude, dtype=float),
                         np.asarray(z.v, dtype=float)])
    nu = zv - _H @ s.mean
    nu[3:6] = wrap_angle(nu[3:6])
    return nu


def fusion_update(s: FusedState, z: OdometryMeasurement) -> FusedState:
    """EKF correction with an odometry pose and velocity (Joseph form)."""
    var = np.asarray(z.variances, dtype=float)
    if var.shape != (3,) or np.any(var <= 0.0):
        raise ValueError("odometry variances must be three positive numbers")
    nu = fusion_innovation(s, z)
    if not np.all(np.isfinite(nu)):
        raise ValueError("odometry measurement is not finite")
    R = np.diag(np.repeat(var, 3))
    S = _H @ s.cov @ _H.T + R
    K = np.linalg.solve(S, _H @ s.cov).T
    IKH = np.eye(NF) - K @ _H
    P = IKH @ s.cov @ IKH.T + K @ R @ K.T
    mean = s.mean + K @ nu
    mean[8] = wrap_angle(mean[8])
    return FusedState(mean, 0.5 * (P + P.T), s.stamp)


class FusionFilter:
    """Stateful wrapper ordering IMU and odometry by stamp.

    Odometry newer than the filter is reached by holding the last IMU
    sample; odometry up to ``max_lag`` older is applied as if current;
    anything later than that is dropped and counted.
    """

    def __init__(self, state: FusedState, g: float = 9.81, noise: FusionNoise = FusionNoise(),
                 max_lag: float = 0.02 + 1e-9):
        self.state = state
        self.g = g
        self.noise = noise
        self.max_lag = max_lag
        self.last_imu: ImuSample | None = None
        self.dropped = 0

    def add_imu(self, imu: ImuSample) -> FusedState:
        self.state = fusion_propagate(self.state, imu, self.g, self.noise)
        self.last_imu = imu
        return self.state

    def add_odometry(self, z: OdometryMeasurement) -> FusedState:
        if z.stamp > self.state.stamp and self.last_imu is not None:
            held = ImuSample(z.stamp, self.last_imu.gyro, self.last_imu.accel)
            self.state = fusion_propagate(self.state, held, self.g, self.noise)
        elif z.stamp < self.state.stamp - self.max_lag:
            self.dropped += 1
            return self.state
        self.state = fusion_update(self.state, z)
        return self.state

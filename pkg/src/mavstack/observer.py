"""Augmented EKF estimating the external force on the vehicle.

The filter state is (p, v, phi, theta, phi_dot, theta_dot, F): the
translational model with second-order roll/pitch responses, and the
external force as a random walk.  Yaw is supplied from outside; it only
rotates the thrust direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .frames import VehicleParams
from .sysid import SecondOrderModel

NS = 13
IDX_P = slice(0, 3)
IDX_V = slice(3, 6)
IDX_ATT = slice(6, 8)
IDX_RATE = slice(8, 10)
IDX_F = slice(10, 13)
_MEAS = np.r_[0:8]  # p, v, phi, theta


@dataclass(frozen=True)
class ObserverNoise:
    """Process PSDs per block and measurement variances."""

    q_position: float = 1e-6
    q_velocity: float = 1e-3
    q_attitude: float = 1e-6
    q_rate: float = 1e-2
    q_force: float = 0.5
    r_position: float = 1e-4
    r_velocity: float = 4e-4
    r_attitude: float = 2.5e-5

    def __post_init__(self):
        if min(vars(self).values()) <= 0.0:
            raise ValueError("observer noise terms must be strictly positive")

    def process(self) -> np.ndarray:
        return np.diag([self.q_position] * 3 + [self.q_velocity] * 3 + [self.q_attitude] * 2
                       + [self.q_rate] * 2 + [self.q_force] * 3)

    def measurement(self) -> np.ndarray:
        return np.diag([self.r_position] * 3 + [self.r_velocity] * 3 + [self.r_attitude] * 2)


@dataclass(frozen=True)
class ObserverParams:
    vehicle: VehicleParams = VehicleParams()
    roll: SecondOrderModel = SecondOrderModel(0.975, 0.512, 5.200)
    pitch: SecondOrderModel = SecondOrderModel(1.052, 0.573, 5.239)
    noise: ObserverNoise = field(default_factory=ObserverNoise)


class ObserverState(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    gated: int = 0

    @classmethod
    def initial(cls, p=(0.0, 0.0, 0.0), cov_diag=None) -> "ObserverState":
        mean = np.zeros(NS)
        mean[IDX_P] = p
        if cov_diag is None:
            cov_diag = [1e-4] * 3 + [1e-4] * 3 + [1e-4] * 2 + [1e-3] * 2 + [1.0] * 3
        return cls(mean, np.diag(np.asarray(cov_diag, dtype=float)), 0)


def _f(x, u, psi, op: ObserverParams):
    vp = op.vehicle
    phi, th = x[6], x[7]
    cf, sf, ct, st = math.cos(phi), math.sin(phi), math.cos(th), math.sin(th)
    cp, sp = math.cos(psi), math.sin(psi)
    T = u[2]
    d = np.empty(NS)
    d[0:3] = x[3:6]
    d[3] = ((cp * cf * st + sp * sf) * T - T * vp.k_d * x[3] + x[10]) / vp.m
    d[4] = ((sp * cf * st - cp * sf) * T - T * vp.k_d * x[4] + x[11]) / vp.m
    d[5] = (cf * ct * T + x[12]) / vp.m - vp.g
    r, q = op.roll, op.pitch
    d[6], d[7] = x[8], x[9]
    d[8] = r.omega**2 * (r.k * u[0] - phi) - 2.0 * r.zeta * r.omega * x[8]
    d[9] = q.omega**2 * (q.k * u[1] - th) - 2.0 * q.zeta * q.omega * x[9]
    d[10:13] = 0.0
    return d


def _jac(x, u, psi, op: ObserverParams):
    vp = op.vehicle
    phi, th = x[6], x[7]
    cf, sf, ct, st = math.cos(phi), math.sin(phi), math.cos(th), math.sin(th)
    cp, sp = math.cos(psi), math.sin(psi)
    T, m = u[2], vp.m
    A = np.zeros((NS, NS))
    A[0:3, 3:6] = np.eye(3)
    A[3, 3] = A[4, 4] = -T * vp.k_d / m
    A[3, 6] = (-cp * sf * st + sp * cf) * T / m
    A[3, 7] = cp * cf * ct * T / m
    A[4, 6] = (-sp * sf * st - cp * cf) * T / m
    A[4, 7] = sp * cf * ct * T / m
    A[5, 6] = -sf * ct * T / m
    A[5, 7] = -cf * st * T / m
    A[3:6, 10:13] = np.eye(3) / m
    r, q = op.roll, op.pitch
    A[6, 8] = A[7, 9] = 1.0
    A[8, 6], A[8, 8] = -r.omega**2, -2.0 * r.zeta * r.omega
    A[9, 7], A[9, 9] = -q.omega**2, -2.0 * q.zeta * q.omega
    return A


def _rk4_jac(x, u, psi, op, dt):
    """RK4 step and its exact state Jacobian."""
    eye = np.eye(NS)
    h2 = 0.5 * dt
    k1 = _f(x, u, psi, op)
    J1 = _jac(x, u, psi, op)
    x2 = x + h2 * k1
    k2 = _f(x2, u, psi, op)
    J2 = _jac(x2, u, psi, op) @ (eye + h2 * J1)
    x3 = x + h2 * k2
    k3 = _f(x3, u, psi, op)
    J3 = _jac(x3, u, psi, op) @ (eye + h2 * J2)
    x4 = x + dt * k3
    k4 = _f(x4, u, psi, op)
    J4 = _jac(x4, u, psi, op) @ (eye + dt * J3)
    xn = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    F = eye + dt / 6.0 * (J1 + 2.0 * J2 + 2.0 * J3 + J4)
    return xn, F


def observer_predict(s: ObserverState, u, op: ObserverParams, dt: float, psi: float = 0.0) -> ObserverState:
    """Propagate mean and covariance over ``dt`` with input ``u`` = (u_phi, u_theta, u_T, ...)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    xn, F = _rk4_jac(np.asarray(s.mean, dtype=float), u, psi, op, dt)
    P = F @ s.cov @ F.T + op.noise.process() * dt
    return ObserverState(xn, 0.5 * (P + P.T), s.gated)


def observer_update(s: ObserverState, z, op: ObserverParams, gate: float = 5.0) -> ObserverState:
    """Correct with a measurement of (p, v, phi, theta).

    Any innovation component beyond ``gate`` standard deviations rejects
    the whole measurement; the rejection is counted in ``gated``.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (8,) or not np.all(np.isfinite(z)):
        raise ValueError("measurement must be a finite 8-vector")
    H = np.zeros((8, NS))
    H[np.arange(8), _MEAS] = 1.0
    R = op.noise.measurement()
    nu = z - H @ s.mean
    S = H @ s.cov @ H.T + R
    if np.any(np.abs(nu) > gate * np.sqrt(np.diag(S))):
        return ObserverState(s.mean, s.cov, s.gated + 1)
    K = np.linalg.solve(S, H @ s.cov).T
    IKH = np.eye(NS) - K @ H
    P = IKH @ s.cov @ IKH.T + K @ R @ K.T
    return ObserverState(s.mean + K @ nu, 0.5 * (P + P.T), s.gated)


def external_force(s: ObserverState):
    """Force estimate (N) and its 3x3 covariance block."""
    return s.mean[IDX_F].copy(), s.cov[IDX_F, IDX_F].copy()

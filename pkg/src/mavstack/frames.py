"""Rotations, frame alignment and the translational/attitude MAV model.

State vectors are plain ``numpy`` arrays laid out as::

    x = [px, py, pz, vx, vy, vz, phi, theta, psi]

with position and velocity in the world frame W (z up) and ZYX Euler
angles (roll about x, pitch about y, yaw about z).  Inputs are
``[u_phi, u_theta, u_T, u_psi_dot]`` (rad, rad, N, rad/s).

All functions are pure.  ``mav_dynamics`` and ``dynamics_jacobians``
broadcast over leading batch dimensions so that a whole horizon can be
linearized in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

NX = 9
NU = 4
POS = slice(0, 3)
VEL = slice(3, 6)
PHI, THETA, PSI = 6, 7, 8

FRAMES = ("W", "O", "B", "C", "V")


class EulerAngles(NamedTuple):
    phi: float
    theta: float
    psi: float


class ControlInput(NamedTuple):
    """Physical controller output. ``np.asarray`` yields the 4-vector."""

    u_phi: float
    u_theta: float
    u_T: float
    u_psi_dot: float = 0.0


@dataclass(frozen=True)
class VehicleParams:
    """Model constants for the rigid body and the first-order attitude loop.

    Defaults are the 3.62 kg platform with the identified roll/pitch
    first-order models (k_phi = 1.673, k_theta = 1.575, tau = 0.472 s).
    """

    m: float = 3.62
    k_d: float = 0.01
    g: float = 9.81
    tau_phi: float = 0.472
    tau_theta: float = 0.472
    k_phi: float = 1.673
    k_theta: float = 1.575
    thrust_max: float = 2.0 * 3.62 * 9.81
    attitude_limit: float = math.pi / 6

    def __post_init__(self):
        for name in ("m", "g", "tau_phi", "tau_theta", "k_phi", "k_theta", "attitude_limit"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.k_d < 0.0:
            raise ValueError("k_d must be non-negative")
        if not self.thrust_max > self.m * self.g:
            raise ValueError("thrust_max must exceed m*g")

    @property
    def hover_thrust(self) -> float:
        return self.m * self.g


@dataclass(frozen=True)
class FrameTransform:
    """Rigid transform mapping coordinates in ``from_frame`` to ``to_frame``."""

    rotation: np.ndarray
    translation: np.ndarray
    from_frame: str
    to_frame: str

    def __post_init__(self):
        if self.from_frame not in FRAMES or self.to_frame not in FRAMES:
            raise ValueError(f"frame labels must be in {FRAMES}")
        if self.from_frame == self.to_frame:
            raise ValueError("from_frame and to_frame must differ")
        check_rotation(self.rotation)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def inverse(self) -> "FrameTransform":
        rt = self.rotation.T
        return FrameTransform(rt, -rt @ self.translation, self.to_frame, self.from_frame)

    def compose(self, inner: "FrameTransform") -> "FrameTransform":
        """Return ``self o inner`` (apply ``inner`` first)."""
        if inner.to_frame != self.from_frame:
            raise ValueError(f"cannot chain {inner.to_frame} into {self.from_frame}")
        return FrameTransform(
            self.rotation @ inner.rotation,
            self.rotation @ inner.translation + self.translation,
            inner.from_frame,
            self.to_frame,
        )


def check_rotation(R, tol: float = 1e-9) -> None:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError("rotation must be 3x3")
    if not np.allclose(R @ R.T, np.eye(3), atol=tol, rtol=0.0):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("rotation determinant is not +1")


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def rotation_from_euler(angles) -> np.ndarray:
    """R_WB = Rz(psi) @ Ry(theta) @ Rx(phi)."""
    phi, theta, psi = angles
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array(
        [
            [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
            [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
            [-st, ct * sf, ct * cf],
        ]
    )


def euler_from_rotation(R) -> EulerAngles:
    R = np.asarray(R, dtype=float)
    theta = -math.asin(max(-1.0, min(1.0, R[2, 0])))
    phi = math.atan2(R[2, 1], R[2, 2])
    psi = math.atan2(R[1, 0], R[0, 0])
    return EulerAngles(phi, theta, wrap_angle(psi))


def euler_rate_matrix(phi: float, theta: float) -> np.ndarray:
    """W such that (phi_dot, theta_dot, psi_dot) = W @ body_rates."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, tt = math.cos(theta), math.tan(theta)
    return np.array(
        [
            [1.0, sf * tt, cf * tt],
            [0.0, cf, -sf],
            [0.0, sf / ct, cf / ct],
        ]
    )


def ned_to_body_alignment(sample_attitude, sample_rates, sample_accel):
    """Re-express autopilot IMU readings (NED convention) in the z-up body frame.

    A rotation of pi about x negates the y and z components of vectors.
    For the attitude, conjugating R = Rz Ry Rx by that rotation flips the
    sign of pitch and yaw and leaves roll unchanged.  The map is an
    involution.
    """
    flip = np.array([1.0, -1.0, -1.0])
    phi, theta, psi = sample_attitude
    attitude = EulerAngles(float(phi), -float(theta), wrap_angle(-float(psi)))
    rates = flip * np.asarray(sample_rates, dtype=float)
    accel = flip * np.asarray(sample_accel, dtype=float)
    return attitude, rates, accel


def _thrust_direction(phi, theta, psi):
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    return np.stack(
        [cp * cf * st + sp * sf, sp * cf * st - cp * sf, cf * ct], axis=-1
    )


def mav_dynamics(x, u, params: VehicleParams, f_ext=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Continuous-time state derivative.

    p_dot = v
    v_dot = (R e3 u_T - u_T K_drag v + F_ext) / m - g e3,   K_drag = diag(k_d, k_d, 0)
    phi_dot = (k_phi u_phi - phi) / tau_phi, theta likewise
    psi_dot = u_psi_dot

    Drag acts on the world-frame velocity.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    f_ext = np.asarray(f_ext, dtype=float)
    phi, theta, psi = x[..., PHI], x[..., THETA], x[..., PSI]
    thrust = u[..., 2]
    v = x[..., VEL]

    drag = np.stack([v[..., 0], v[..., 1], np.zeros_like(v[..., 2])], axis=-1) * params.k_d
    acc = (
        _thrust_direction(phi, theta, psi) * thrust[..., None] - thrust[..., None] * drag + f_ext
    ) / params.m
    acc = acc - np.array([0.0, 0.0, params.g])

    dx = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (NX,)))
    dx[..., POS] = v
    dx[..., VEL] = acc
    dx[..., PHI] = (params.k_phi * u[..., 0] - phi) / params.tau_phi
    dx[..., THETA] = (params.k_theta * u[..., 1] - theta) / params.tau_theta
    dx[..., PSI] = u[..., 3]
    return dx


def dynamics_jacobians(x, u, params: VehicleParams):
    """Analytic (df/dx, df/du) of :func:`mav_dynamics`; F_ext enters additively."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    phi, theta, psi = x[..., PHI], x[..., THETA], x[..., PSI]
    thrust = u[..., 2]
    m, kd = params.m, params.k_d

    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    d_phi = np.stack([-cp * sf * st + sp * cf, -sp * sf * st - cp * cf, -sf * ct], axis=-1)
    d_theta = np.stack([cp * cf * ct, sp * cf * ct, -cf * st], axis=-1)
    d_psi = np.stack([-sp * cf * st + cp * sf, cp * cf * st + sp * sf, np.zeros_like(phi)], axis=-1)
    direction = np.stack([cp * cf * st + sp * sf, sp * cf * st - cp * sf, cf * ct], axis=-1)

    A = np.zeros(batch + (NX, NX))
    B = np.zeros(batch + (NX, NU))
    A[..., 0, 3] = A[..., 1, 4] = A[..., 2, 5] = 1.0
    A[..., 3, 3] = A[..., 4, 4] = -thrust * kd / m
    A[..., 3:6, PHI] = d_phi * (thrust / m)[..., None]
    A[..., 3:6, THETA] = d_theta * (thrust / m)[..., None]
    A[..., 3:6, PSI] = d_psi * (thrust / m)[..., None]
    A[..., PHI, PHI] = -1.0 / params.tau_phi
    A[..., THETA, THETA] = -1.0 / params.tau_theta

    v = x[..., VEL]
    B[..., 3, 2] = (direction[..., 0] - kd * v[..., 0]) / m
    B[..., 4, 2] = (direction[..., 1] - kd * v[..., 1]) / m
    B[..., 5, 2] = direction[..., 2] / m
    B[..., PHI, 0] = params.k_phi / params.tau_phi
    B[..., THETA, 1] = params.k_theta / params.tau_theta
    B[..., PSI, 3] = 1.0
    return A, B


def rk4_step(x, u, params: VehicleParams, f_ext=(0.0, 0.0, 0.0), dt: float = 0.002) -> np.ndarray:
    """Classical RK4 with the input held over the step."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = mav_dynamics(x, u, params, f_ext)
    k2 = mav_dynamics(x + 0.5 * dt * k1, u, params, f_ext)
    k3 = mav_dynamics(x + 0.5 * dt * k2, u, params, f_ext)
    k4 = mav_dynamics(x + dt * k3, u, params, f_ext)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_jacobians(x, u, params: VehicleParams, f_ext=(0.0, 0.0, 0.0), dt: float = 0.1):
    """RK4 step together with its exact Jacobians w.r.t. state and input.

    Broadcasts over leading batch dimensions.  Returns ``(x_next, A, B)``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    eye = np.eye(NX)
    h2 = 0.5 * dt

    k1 = mav_dynamics(x, u, params, f_ext)
    A1, B1 = dynamics_jacobians(x, u, params)
    dk1x, dk1u = A1, B1

    x2 = x + h2 * k1
    k2 = mav_dynamics(x2, u, params, f_ext)
    A2, B2 = dynamics_jacobians(x2, u, params)
    dk2x = A2 @ (eye + h2 * dk1x)
    dk2u = A2 @ (h2 * dk1u) + B2

    x3 = x + h2 * k2
    k3 = mav_dynamics(x3, u, params, f_ext)
    A3, B3 = dynamics_jacobians(x3, u, params)
    dk3x = A3 @ (eye + h2 * dk2x)
    dk3u = A3 @ (h2 * dk2u) + B3

    x4 = x + dt * k3
    k4 = mav_dynamics(x4, u, params, f_ext)
    A4, B4 = dynamics_jacobians(x4, u, params)
    dk4x = A4 @ (eye + dt * dk3x)
    dk4u = A4 @ (dt * dk3u) + B4

    x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    A = eye + dt / 6.0 * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    B = dt / 6.0 * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return x_next, A, B


def hover_attitude(params: VehicleParams, f_ext=(0.0, 0.0, 0.0), psi: float = 0.0):
    """Thrust and (roll, pitch) that cancel gravity and a constant external force."""
    f_ext = np.asarray(f_ext, dtype=float)
    need = np.array([-f_ext[0], -f_ext[1], params.m * params.g - f_ext[2]])
    if need[2] <= 0.0:
        raise ValueError("external force exceeds weight; no hover thrust exists")
    thrust = float(np.linalg.norm(need))
    cp, sp = math.cos(psi), math.sin(psi)
    # direction expressed in the yaw-aligned frame
    bx = (cp * need[0] + sp * need[1]) / thrust
    by = (-sp * need[0] + cp * need[1]) / thrust
    bz = need[2] / thrust
    phi = math.asin(max(-1.0, min(1.0, -by)))
    theta = math.atan2(bx, bz)
    return thrust, phi, theta


def hover_input(params: VehicleParams, f_ext=(0.0, 0.0, 0.0), psi: float = 0.0) -> ControlInput:
    """Steady input that holds the vehicle at rest against gravity and ``f_ext``.

    The returned angles are exact (not small-angle); at the matching
    attitude ``(k_phi*u_phi, k_theta*u_theta, psi)`` the dynamics vanish.

    Raises
    ------
    ValueError
        If the required thrust is outside ``[0, thrust_max]`` or the
        required tilt exceeds the attitude limit.
    """
    thrust, phi, theta = hover_attitude(params, f_ext, psi)
    if thrust > params.thrust_max:
        raise ValueError(f"required thrust {thrust:.3f} N exceeds thrust_max")
    u = ControlInput(phi / params.k_phi, theta / params.k_theta, thrust, 0.0)
    lim = params.attitude_limit
    if max(abs(phi), abs(theta), abs(u.u_phi), abs(u.u_theta)) > lim:
        raise ValueError("required tilt exceeds the attitude limit")
    return u

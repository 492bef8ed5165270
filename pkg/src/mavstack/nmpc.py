"""Receding-horizon nonlinear MPC for position control.

The optimal control problem is transcribed by single shooting: the
decision variables are the N inputs (roll, pitch, thrust), the states
follow from an RK4 rollout of the translational model with yaw held
fixed.  The least-squares objective is minimised by Gauss-Newton with a
projected Newton step for the input box (Bertsekas' two-metric
projection) and an Armijo search along the projection arc.

Yaw is not part of the OCP; a proportional yaw-rate law handles it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .frames import ControlInput, VehicleParams, hover_input, rk4_step_jacobians, wrap_angle

NZ = 8  # p, v, phi, theta
NW = 3  # u_phi, u_theta, u_T


@dataclass(frozen=True)
class MpcWeights:
    q: tuple = (40.0, 40.0, 60.0, 20.0, 20.0, 25.0, 10.0, 10.0)
    r: tuple = (35.0, 35.0, 2.0)
    p: tuple | None = None

    def __post_init__(self):
        if self.p is None:
            object.__setattr__(self, "p", tuple(10.0 * v for v in self.q))
        if len(self.q) != NZ or len(self.p) != NZ or len(self.r) != NW:
            raise ValueError("weights need 8 state, 3 input and 8 terminal entries")
        if min(self.q) < 0.0 or min(self.p) < 0.0:
            raise ValueError("state weights must be non-negative")
        if min(self.r) <= 0.0:
            raise ValueError("input weights must be positive")


def default_bounds(params: VehicleParams) -> tuple:
    lim = math.pi / 6.0
    mg = params.m * params.g
    return ((-lim, lim), (-lim, lim), (0.3 * mg, 1.8 * mg))


@dataclass(frozen=True)
class OcpSpec:
    params: VehicleParams = VehicleParams()
    horizon_T: float = 2.0
    n_steps: int = 20
    weights: MpcWeights = MpcWeights()
    input_bounds: tuple | None = None

    def __post_init__(self):
        if self.input_bounds is None:
            object.__setattr__(self, "input_bounds", default_bounds(self.params))
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if not self.horizon_T > 0.0:
            raise ValueError("horizon must be positive")
        for lo, hi in self.input_bounds:
            if not lo < hi:
                raise ValueError("input bounds need lo < hi")
        if self.input_bounds[2][0] < 0.0:
            raise ValueError("thrust lower bound must be non-negative")

    @property
    def dt(self) -> float:
        return self.horizon_T / self.n_steps

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.input_bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.input_bounds])


class ReferencePoint(NamedTuple):
    x_ref: np.ndarray  # (p, v, phi, theta, psi)
    u_ref: ControlInput


class ControlPlan(NamedTuple):
    first_input: ControlInput
    predicted_states: np.ndarray  # (N+1, 9), yaw held
    predicted_inputs: tuple  # N ControlInput
    cost: float
    iterations: int
    cost_history: tuple = ()


# ---------------------------------------------------------------------------
# model


def _rollout(z0, W, psi, f, params: VehicleParams, dt: float) -> np.ndarray:
    """RK4 rollout of the 8-state model with yaw fixed; scalar arithmetic."""
    m, g, kd = params.m, params.g, params.k_d
    kp, kt = params.k_phi, params.k_theta
    tp, tt = params.tau_phi, params.tau_theta
    cp, sp = math.cos(psi), math.sin(psi)
    fx, fy, fz = f

    def deriv(z, up, ut, T):
        phi, th = z[6], z[7]
        cf, sf = math.cos(phi), math.sin(phi)
        ct, st = math.cos(th), math.sin(th)
        return (
            z[3], z[4], z[5],
            ((cp * cf * st + sp * sf) * T - T * kd * z[3] + fx) / m,
            ((sp * cf * st - cp * sf) * T - T * kd * z[4] + fy) / m,
            (cf * ct * T + fz) / m - g,
            (kp * up - phi) / tp,
            (kt * ut - th) / tt,
        )

    out = [tuple(float(v) for v in z0)]
    z = out[0]
    h2 = 0.5 * dt
    for up, ut, T in W.tolist():
        k1 = deriv(z, up, ut, T)
        k2 = deriv([a + h2 * b for a, b in zip(z, k1)], up, ut, T)
        k3 = deriv([a + h2 * b for a, b in zip(z, k2)], up, ut, T)
        k4 = deriv([a + dt * b for a, b in zip(z, k3)], up, ut, T)
        z = tuple(a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(z, k1, k2, k3, k4))
        out.append(z)
    return np.array(out)


def linearize_dynamics(x, u, params: VehicleParams, f_ext=(0.0, 0.0, 0.0), dt: float = 0.1):
    """Jacobians (8x8, 8x3) of the RK4 step over (p, v, phi, theta) and (u_phi, u_theta, u_T).

    ``x`` may carry yaw as a ninth entry; it is held fixed.
    """
    x = np.asarray(x, dtype=float)
    x9 = np.concatenate([x[:NZ], [x[NZ] if x.size > NZ else 0.0]])
    u4 = np.array([*np.asarray(u, dtype=float)[:NW], 0.0])
    _, A, B = rk4_step_jacobians(x9, u4, params, f_ext, dt)
    return A[:NZ, :NZ], B[:NZ, :NW]


def _sensitivities(Z, W, psi, f, params, dt):
    """d z_k / d w_j for the whole horizon, shape (N+1, 8, N*3)."""
    N = W.shape[0]
    X9 = np.column_stack([Z[:-1], np.full(N, psi)])
    U4 = np.column_stack([W, np.zeros(N)])
    _, A, B = rk4_step_jacobians(X9, U4, params, f, dt)
    A, B = A[:, :NZ, :NZ], B[:, :NZ, :NW]
    G = np.zeros((N + 1, NZ, N * NW))
    for k in range(1, N + 1):
        G[k] = A[k - 1] @ G[k - 1]
        G[k][:, (k - 1) * NW:k * NW] += B[k - 1]
    return G


# ---------------------------------------------------------------------------
# solver


class _Problem:
    def __init__(self, ocp: OcpSpec, x0, refs, f_ext):
        self.ocp = ocp
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (9,) or not np.all(np.isfinite(x0)):
            raise ValueError("x0 must be a finite 9-vector (p, v, phi, theta, psi)")
        N = ocp.n_steps
        if len(refs) != N + 1:
            raise ValueError(f"need {N + 1} reference points, got {len(refs)}")
        self.z0, self.psi = x0[:NZ], float(x0[NZ])
        self.f = tuple(float(v) for v in f_ext)
        self.zref = np.array([np.asarray(r.x_ref, dtype=float)[:NZ] for r in refs])
        self.wref = np.array([np.asarray(r.u_ref, dtype=float)[:NW] for r in refs[:N]])
        dt = ocp.dt
        w = ocp.weights
        self.sq = np.sqrt(np.array(w.q) * dt)
        self.sp = np.sqrt(np.array(w.p))
        self.sr = np.sqrt(np.array(w.r) * dt)
        self.lo = np.tile(ocp.lower, N)
        self.hi = np.tile(ocp.upper, N)

    def rollout(self, W):
        return _rollout(self.z0, W, self.psi, self.f, self.ocp.params, self.ocp.dt)

    def residual(self, W, Z):
        ez = Z - self.zref
        rx = np.concatenate([(ez[:-1] * self.sq).ravel(), ez[-1] * self.sp])
        ru = ((W - self.wref) * self.sr).ravel()
        return np.concatenate([rx, ru])

    def jacobian(self, W, Z):
        N = self.ocp.n_steps
        G = _sensitivities(Z, W, self.psi, self.f, self.ocp.params, self.ocp.dt)
        Jx = np.concatenate([(G[:-1] * self.sq[None, :, None]).reshape(N * NZ, -1), G[-1] * self.sp[:, None]])
        Ju = np.diag(np.tile(self.sr, N))
        return np.vstack([Jx, Ju])

    def cost(self, W):
        Z = self.rollout(W)
        r = self.residual(W, Z)
        return float(r @ r), Z, r


def _projected_gradient_norm(w, g, lo, hi):
    return float(np.abs(w - np.clip(w - g, lo, hi)).max())


def solve(ocp: OcpSpec, x0, refs, f_ext=(0.0, 0.0, 0.0), warm_start: ControlPlan | None = None,
          max_iter: int = 50, cost_tol: float = 1e-8, grad_tol: float = 1e-6) -> ControlPlan:
    """Minimise the discretised tracking cost over the horizon.

    The returned plan is always feasible (inputs inside the box) and its
    cost is the objective re-evaluated on the returned inputs.
    """
    prob = _Problem(ocp, x0, refs, f_ext)
    N = ocp.n_steps
    if warm_start is not None:
        W = np.array([np.asarray(u, dtype=float)[:NW] for u in warm_start.predicted_inputs])
    else:
        W = prob.wref.copy()
    W = np.clip(W, ocp.lower, ocp.upper)
    w = W.ravel()
    cost, Z, r = prob.cost(W)
    history = [cost]
    it = 0
    while it < max_iter:
        J = prob.jacobian(W, Z)
        g = 2.0 * J.T @ r
        if _projected_gradient_norm(w, g, prob.lo, prob.hi) < grad_tol:
            break
        H = 2.0 * J.T @ J
        # two-metric projection: variables pinned at a bound with the
        # gradient pushing outward are moved by scaled gradient only
        eps = min(1e-6, _projected_gradient_norm(w, g, prob.lo, prob.hi))
        active = ((w <= prob.lo + eps) & (g > 0.0)) | ((w >= prob.hi - eps) & (g < 0.0))
        free = ~active
        d = np.zeros_like(w)
        if free.any():
            Hf = H[np.ix_(free, free)]
            d[free] = np.linalg.solve(Hf + 1e-12 * np.eye(Hf.shape[0]), g[free])
        if active.any():
            d[active] = g[active] / np.maximum(np.diag(H)[active], 1e-12)
        it += 1
        alpha, accepted = 1.0, False
        for _ in range(30):
            w_new = np.clip(w - alpha * d, prob.lo, prob.hi)
            W_new = w_new.reshape(N, NW)
            c_new, Z_new, r_new = prob.cost(W_new)
            if c_new <= cost + 1e-4 * (g @ (w_new - w)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted or c_new > cost:
            break
        decrease = cost - c_new
        w, W, Z, r, cost = w_new, W_new, Z_new, r_new, c_new
        history.append(cost)
        if decrease < cost_tol:
            break

    inputs = tuple(ControlInput(float(a), float(b), float(c), 0.0) for a, b, c in W)
    states = np.column_stack([Z, np.full(N + 1, prob.psi)])
    return ControlPlan(inputs[0], states, inputs, cost, it, tuple(history))


def plan_cost(ocp: OcpSpec, x0, refs, inputs, f_ext=(0.0, 0.0, 0.0)) -> float:
    """Objective value of an input sequence (no optimisation)."""
    prob = _Problem(ocp, x0, refs, f_ext)
    W = np.array([np.asarray(u, dtype=float)[:NW] for u in inputs])
    return prob.cost(W)[0]


# ---------------------------------------------------------------------------
# references and the receding-horizon loop


def steady_state_input(ref, f_ext, params: VehicleParams, psi: float = 0.0) -> ControlInput:
    """Input holding the vehicle on ``ref`` against gravity and ``f_ext``.

    ``ref`` is a state vector (rest) or anything with ``velocity`` and
    ``acceleration`` attributes; the force needed for the reference
    acceleration and the drag at the reference velocity are folded into
    the external force before the hover balance is solved.
    """
    f = np.asarray(f_ext, dtype=float)
    acc = getattr(ref, "acceleration", None)
    vel = getattr(ref, "velocity", None)
    if acc is not None:
        drag = params.hover_thrust * params.k_d * np.array([vel[0], vel[1], 0.0])
        f = f - params.m * np.asarray(acc, dtype=float) - drag
    return hover_input(params, f, psi)


def _feasible_steady_input(point, f_ext, ocp: OcpSpec, psi: float) -> ControlInput:
    try:
        u = steady_state_input(point, f_ext, ocp.params, psi)
    except ValueError:
        u = steady_state_input(np.zeros(9), (0.0, 0.0, 0.0), ocp.params, psi)
    clipped = np.clip(np.asarray(u)[:NW], ocp.lower, ocp.upper)
    return ControlInput(*clipped.tolist(), 0.0)


def reference_from(point, f_ext, ocp: OcpSpec, psi: float) -> ReferencePoint:
    """OCP reference from a trajectory sample (position, velocity, accel, yaw)."""
    u = _feasible_steady_input(point, f_ext, ocp, psi)
    p = ocp.params
    x = np.concatenate([point.position, point.velocity, [p.k_phi * u.u_phi, p.k_theta * u.u_theta, point.yaw]])
    return ReferencePoint(x, u)


@dataclass
class MpcController:
    """Solver plus warm-start state for one control loop."""

    ocp: OcpSpec = field(default_factory=OcpSpec)
    k_psi: float = 1.0
    yaw_rate_limit: float = math.pi / 2
    yaw_feedforward: bool = False
    warm_start: ControlPlan | None = None
    last_plan: ControlPlan | None = None

    def yaw_rate_command(self, psi_ref: float, psi: float, rate_ref: float = 0.0) -> float:
        """Proportional heading law, plus the reference rate when ``yaw_feedforward`` is set."""
        cmd = self.k_psi * float(wrap_angle(psi_ref - psi))
        if self.yaw_feedforward:
            cmd += rate_ref
        return min(max(cmd, -self.yaw_rate_limit), self.yaw_rate_limit)


def _shifted(plan: ControlPlan) -> ControlPlan:
    inputs = plan.predicted_inputs[1:] + plan.predicted_inputs[-1:]
    return plan._replace(predicted_inputs=inputs)


def receding_horizon_step(ctrl: MpcController, x0, t: float, sampler: Callable, f_ext=(0.0, 0.0, 0.0)):
    """Solve at time ``t`` and return ``(first_input, ctrl)``.

    ``sampler(t)`` returns a trajectory point (position, velocity,
    acceleration, yaw).  The next solve is warm-started from this plan
    shifted by one step.
    """
    ocp = ctrl.ocp
    x0 = np.asarray(x0, dtype=float)
    psi = float(x0[NZ])
    refs = [reference_from(sampler(t + k * ocp.dt), f_ext, ocp, psi) for k in range(ocp.n_steps + 1)]
    plan = solve(ocp, x0, refs, f_ext, ctrl.warm_start)
    ctrl.last_plan = plan
    ctrl.warm_start = _shifted(plan)
    now = sampler(t)
    u = plan.first_input._replace(u_psi_dot=ctrl.yaw_rate_command(now.yaw, psi, now.yaw_rate))
    return u, ctrl

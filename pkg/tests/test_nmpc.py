import itertools
import math

import numpy as np
import pytest

from mavstack.frames import ControlInput, VehicleParams, hover_input, rk4_step
from mavstack.nmpc import (
    MpcController,
    MpcWeights,
    OcpSpec,
    ReferencePoint,
    linearize_dynamics,
    plan_cost,
    receding_horizon_step,
    solve,
    steady_state_input,
)
from mavstack.trajectory import TrajectoryPoint

P = VehicleParams()
OCP = OcpSpec()


def _hover_refs(ocp, p=(0.0, 0.0, 1.0), f_ext=(0.0, 0.0, 0.0), psi=0.0):
    u = hover_input(ocp.params, f_ext, psi)
    x = np.array([*p, 0, 0, 0, ocp.params.k_phi * u.u_phi, ocp.params.k_theta * u.u_theta, psi])
    return x, [ReferencePoint(x, u)] * (ocp.n_steps + 1)


def _fd(fun, z, eps=1e-6):
    cols = []
    for i in range(z.size):
        dz = np.zeros_like(z)
        dz[i] = eps
        cols.append((fun(z + dz) - fun(z - dz)) / (2 * eps))
    return np.stack(cols, axis=-1)


def _step8(z, w, psi=0.3, f=(0.2, -0.1, 0.05), dt=0.1):
    x = rk4_step(np.append(z, psi), np.append(w, 0.0), P, f, dt)
    return x[:8]


# linearisation


def test_position_rows_are_double_integrator():
    A, B = linearize_dynamics(np.zeros(9), hover_input(P), P, dt=0.1)
    np.testing.assert_allclose(A[0:3, 3:6], 0.1 * np.eye(3), atol=1e-3)
    np.testing.assert_allclose(A[0:3, 0:3], np.eye(3), atol=0)
    assert A.shape == (8, 8) and B.shape == (8, 3)


def test_linearization_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        z = rng.uniform(-1, 1, 8) * [5, 5, 5, 3, 3, 3, 0.4, 0.4]
        w = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(11, 63)])
        A, B = linearize_dynamics(np.append(z, 0.3), w, P, (0.2, -0.1, 0.05), 0.1)
        A_fd = _fd(lambda q: _step8(q, w), z)
        B_fd = _fd(lambda q: _step8(z, q), w)
        assert np.abs(A - A_fd).max() / max(1.0, np.abs(A_fd).max()) <= 1e-5
        assert np.abs(B - B_fd).max() / max(1.0, np.abs(B_fd).max()) <= 1e-5


def test_attitude_diagonal():
    for dt in (0.01, 0.1):
        A, _ = linearize_dynamics(np.zeros(9), hover_input(P), P, dt=dt)
        h = dt / P.tau_phi
        rk4_poly = 1 - h + h**2 / 2 - h**3 / 6 + h**4 / 24
        assert A[6, 6] == pytest.approx(rk4_poly, abs=1e-15)
    A, _ = linearize_dynamics(np.zeros(9), hover_input(P), P, dt=0.01)
    assert abs(A[6, 6] - math.exp(-0.01 / P.tau_phi)) <= 1e-9


# solver


def test_optimum_at_reference():
    x, refs = _hover_refs(OCP)
    plan = solve(OCP, x, refs, warm_start=None)
    np.testing.assert_allclose(plan.first_input[:3], refs[0].u_ref[:3], atol=1e-6)
    assert plan.cost <= 1e-10
    np.testing.assert_allclose(plan.predicted_states[0], x)


def test_optimum_at_reference_with_disturbance_and_yaw():
    f = (1.5, -0.7, 0.4)
    x, refs = _hover_refs(OCP, f_ext=f, psi=0.8)
    plan = solve(OCP, x, refs, f)
    assert np.abs(np.subtract(plan.first_input[:3], refs[0].u_ref[:3])).max() <= 1e-6
    assert plan.cost <= 1e-10


def test_position_offset_commands_negative_pitch():
    x, refs = _hover_refs(OCP)
    x0 = x.copy()
    x0[0] += 1.0
    plan = solve(OCP, x0, refs)
    assert plan.first_input.u_theta < 0
    assert plan.cost < plan_cost(OCP, x0, refs, [r.u_ref for r in refs[:-1]])


def test_reported_cost_and_monotone_history():
    rng = np.random.default_rng(1)
    x, refs = _hover_refs(OCP)
    for _ in range(20):
        x0 = x + rng.normal(size=9) * [1, 1, 1, 0.5, 0.5, 0.5, 0.1, 0.1, 0]
        plan = solve(OCP, x0, refs)
        assert all(b <= a for a, b in zip(plan.cost_history, plan.cost_history[1:]))
        again = plan_cost(OCP, x0, refs, plan.predicted_inputs)
        assert plan.cost == pytest.approx(again, rel=1e-10)


def test_inputs_stay_in_bounds():
    rng = np.random.default_rng(2)
    lo, hi = OCP.lower, OCP.upper
    for _ in range(100):
        x0 = np.concatenate([rng.uniform(-3, 3, 3), rng.uniform(-2, 2, 3), rng.uniform(-0.4, 0.4, 2),
                             [rng.uniform(-math.pi, math.pi)]])
        f = rng.uniform(-3, 3, 3)
        _, refs = _hover_refs(OCP, p=rng.uniform(-2, 2, 3))
        plan = solve(OCP, x0, refs, f)
        W = np.array([u[:3] for u in plan.predicted_inputs])
        assert np.all(W >= lo) and np.all(W <= hi)


def test_shift_invariance():
    x, refs = _hover_refs(OCP)
    x0 = x + [0.4, -0.3, 0.2, 0.1, 0, 0, 0, 0.05, 0]
    offset = np.array([3.0, -7.0, 2.5])
    base = solve(OCP, x0, refs)
    shifted_refs = [ReferencePoint(r.x_ref + np.r_[offset, np.zeros(6)], r.u_ref) for r in refs]
    moved = solve(OCP, x0 + np.r_[offset, np.zeros(6)], shifted_refs)
    got = np.array([u[:3] for u in moved.predicted_inputs])
    want = np.array([u[:3] for u in base.predicted_inputs])
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_warm_and_cold_start_agree_after_convergence():
    x, refs = _hover_refs(OCP)
    x0 = x + [0.3, 0.2, -0.1, 0, 0, 0, 0, 0, 0]
    tight = dict(cost_tol=1e-15, grad_tol=1e-10, max_iter=200)
    cold = solve(OCP, x0, refs, **tight)
    nudged = cold._replace(predicted_inputs=tuple(u._replace(u_T=u.u_T + 0.3) for u in cold.predicted_inputs))
    warm = solve(OCP, x0, refs, warm_start=nudged, **tight)
    np.testing.assert_allclose(warm.first_input, cold.first_input, atol=1e-6)


def test_grid_oracle_small_instance():
    """Three-step problem, one channel free at a time, against a 21^3 grid."""
    ocp = OcpSpec(horizon_T=0.6, n_steps=3, weights=MpcWeights(q=(4, 4, 4, 1, 1, 1, 1, 1), r=(1, 1, 0.1)))
    x, refs = _hover_refs(ocp)
    x0 = x + [0.3, -0.2, 0.1, 0, 0, 0, 0, 0, 0]
    u_h = refs[0].u_ref
    spans = [(-0.2, 0.2), (-0.2, 0.2), (u_h.u_T - 5, u_h.u_T + 5)]
    for ch in range(3):
        bounds = [(v, v + 1e-12) for v in (0.0, 0.0, u_h.u_T)]
        bounds[ch] = spans[ch]
        small = OcpSpec(ocp.params, ocp.horizon_T, ocp.n_steps, ocp.weights, tuple(bounds))
        plan = solve(small, x0, refs, cost_tol=1e-14, grad_tol=1e-10, max_iter=100)
        grid = np.linspace(*spans[ch], 21)
        step = grid[1] - grid[0]
        best, arg = np.inf, None
        for combo in itertools.product(grid, repeat=3):
            inputs = []
            for v in combo:
                u = [0.0, 0.0, u_h.u_T]
                u[ch] = v
                inputs.append(ControlInput(*u, 0.0))
            c = plan_cost(small, x0, refs, inputs)
            if c < best:
                best, arg = c, combo
        assert plan.cost <= best + 1e-12
        got = [u[ch] for u in plan.predicted_inputs]
        assert np.all(np.abs(np.subtract(got, arg)) <= step)


def test_solver_input_validation():
    x, refs = _hover_refs(OCP)
    with pytest.raises(ValueError):
        solve(OCP, np.full(9, np.nan), refs)
    with pytest.raises(ValueError):
        solve(OCP, x, refs[:5])
    with pytest.raises(ValueError):
        OcpSpec(n_steps=1)
    with pytest.raises(ValueError):
        MpcWeights(r=(1, 0, 1))


# steady state and receding horizon


def test_steady_state_input():
    u = steady_state_input(np.zeros(9), (0, 0, 0), P)
    assert u.u_T == pytest.approx(P.m * P.g)
    u = steady_state_input(np.zeros(9), (0, 0, 1.0), P)
    assert u.u_T == pytest.approx(34.5122, abs=1e-4)
    with pytest.raises(ValueError):
        steady_state_input(np.zeros(9), (0, 0, 100.0), P)
    point = TrajectoryPoint(np.zeros(3), np.zeros(3), np.array([1.0, 0, 0]), 0.0)
    u = steady_state_input(point, (0, 0, 0), P)
    assert u.u_theta > 0


def test_yaw_rate_law():
    ctrl = MpcController(k_psi=1.0)
    assert ctrl.yaw_rate_command(0.1, 0.0) == pytest.approx(0.1)
    assert ctrl.yaw_rate_command(-math.pi + 0.05, math.pi - 0.05) == pytest.approx(0.1)
    assert ctrl.yaw_rate_command(3.0, 0.0) == pytest.approx(math.pi / 2)
    assert ctrl.yaw_rate_command(0.1, 0.0, 0.7) == pytest.approx(0.1)


def test_yaw_rate_feedforward():
    ctrl = MpcController(k_psi=1.0, yaw_feedforward=True)
    assert ctrl.yaw_rate_command(0.1, 0.0, 0.7) == pytest.approx(0.8)
    assert ctrl.yaw_rate_command(0.0, 0.0, 5.0) == pytest.approx(math.pi / 2)


def test_receding_horizon_converges_to_hover():
    ctrl = MpcController()
    target = np.array([0.0, 0.0, 1.0])
    ref = TrajectoryPoint(target, np.zeros(3), np.zeros(3), 0.2)
    x = np.array([0.5, -0.3, 0.8, 0, 0, 0, 0, 0, 0.0])
    dt = 0.02
    for k in range(400):
        u, ctrl = receding_horizon_step(ctrl, x, k * dt, lambda t: ref)
        for _ in range(10):
            x = rk4_step(x, u, P, dt=dt / 10)
    np.testing.assert_allclose(x[:3], target, atol=1e-4)
    assert x[8] == pytest.approx(0.2, abs=1e-4)
    # residual set by the solver's cost-decrease stopping rule
    np.testing.assert_allclose(u[:3], hover_input(P, psi=x[8])[:3], atol=1e-3)

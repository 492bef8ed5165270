import math

import numpy as np
import pytest
from scipy import signal

from mavstack.frames import ControlInput, VehicleParams, euler_rate_matrix, rotation_from_euler
from mavstack.simulator import (
    DRIFT_NORM_MEAN,
    ActuatorModel,
    ImuNoise,
    OdometryEmulator,
    OdometryState,
    PlantState,
    WindModel,
    WindState,
    World,
    actuate,
    chirp_log,
    command_from_input,
    hover_state,
    plant_step,
    sample_imu,
    sample_odometry,
    staircase_log,
    trim_log,
    wind_step,
)
from mavstack.sysid import (
    ActuatorCommand,
    DeadZone,
    IdentificationError,
    TrimOffset,
    detect_dead_zone,
    estimate_trim,
    fit_channel,
)

P = VehicleParams()
HOVER_T = P.m * P.g
VEL = ActuatorModel(vertical_mode="velocity")


def test_hover_persists():
    world = World()
    world.advance(ActuatorCommand(), 1.0, HOVER_T)
    assert np.abs(world.state.p).max() <= 1e-6
    world = World(VEL)
    world.advance(ActuatorCommand(), 1.0)
    assert np.abs(world.state.p).max() <= 1e-6


def test_roll_step_steady_state():
    world = World()
    world.advance(ActuatorCommand(200, 0, 0, 0), 6.0, HOVER_T)
    expected = 0.975 * 8.65e-4 * 200
    assert world.state.attitude.phi == pytest.approx(expected, abs=1e-6)
    assert world.state.attitude.phi == pytest.approx(0.16874, abs=1e-4)


def test_command_inside_dead_zone_gives_no_response():
    act = ActuatorModel().with_dead_zone("phi", DeadZone(-51, 51))
    world = World(act)
    world.advance(ActuatorCommand(50, 0, 0, 0), 1.0, HOVER_T)
    assert world.state.attitude.phi == 0.0
    assert world.state.attitude_rates == (0.0, 0.0)


def test_trim_shifts_dead_zone_center():
    act = ActuatorModel(dead_zones=(DeadZone(-51, 51),) * 4, trims=TrimOffset(30, 0, 0, 0))
    grid = np.arange(-100.0, 150.0, 0.5)
    active = np.array([actuate(ActuatorCommand(c, 0, 0, 0), act)[0] != 0.0 for c in grid])
    quiet = grid[~active]
    assert (quiet.min(), quiet.max()) == (30 - 51, 30 + 51)


def test_second_order_attitude_step_matches_analytic():
    act = ActuatorModel()
    world = World(act)
    c = 150.0
    t = np.arange(0, 3.0001, 0.01)
    phis, thetas = [], []
    for _ in t:
        phis.append(world.state.attitude.phi)
        thetas.append(world.state.attitude.theta)
        world.advance(ActuatorCommand(c, -c, 0, 0), 0.01, HOVER_T)
    for model, lam, y in ((act.roll, act.scales.lambda_phi, phis), (act.pitch, act.scales.lambda_theta, thetas)):
        b, a1, a0 = model.transfer_function()
        _, ref = signal.step(signal.TransferFunction([b], [1.0, a1, a0]), T=t)
        sign = 1 if y is phis else -1
        assert np.abs(np.array(y) - sign * lam * c * ref).max() <= 1e-3


def test_yaw_rate_first_order():
    world = World()
    world.advance(ActuatorCommand(0, 0, 100, 0), 0.16, HOVER_T)
    ss = 1.057 * 2.24e-3 * 100
    assert world.state.psi_dot == pytest.approx(ss * (1 - math.exp(-0.16 / 0.161)), rel=1e-6)


def test_vertical_velocity_mode():
    world = World(VEL)
    world.advance(ActuatorCommand(0, 0, 0, 100), 3.0)
    ss = 1.118 * 2.65e-3 * 100
    assert world.state.v[2] == pytest.approx(ss * (1 - math.exp(-3.0 / 0.334)), rel=1e-6)


def test_ballistic_free_fall():
    params = VehicleParams(k_d=0.0)
    s = PlantState(p=np.array([0.0, 0.0, 10.0]), v=np.array([1.0, 0.0, 2.0]))
    for _ in range(500):
        s = plant_step(s, ActuatorCommand(), ActuatorModel(), params, dt=0.002, thrust=0.0)
    t = 1.0
    np.testing.assert_allclose(s.p, [1.0, 0.0, 10 + 2 * t - 0.5 * P.g * t * t], atol=1e-9)
    np.testing.assert_allclose(s.v, [1.0, 0.0, 2 - P.g * t], atol=1e-9)


def test_plant_step_validation():
    with pytest.raises(ValueError):
        plant_step(hover_state(), ActuatorCommand(), ActuatorModel(), P, dt=0.0, thrust=HOVER_T)
    with pytest.raises(ValueError):
        plant_step(hover_state(), ActuatorCommand(), ActuatorModel(), P)
    with pytest.raises(ValueError):
        PlantState(p=np.array([np.nan, 0, 0]))


def test_command_adapter_round_trip():
    act = ActuatorModel(trims=TrimOffset(12, -7, 3, 0))
    u = ControlInput(0.1, -0.05, HOVER_T, 0.2)
    phys = actuate(command_from_input(u, act), act)
    np.testing.assert_allclose(phys[:3], [0.1, -0.05, 0.2], rtol=1e-12)


def test_command_adapter_rounds_inside_dead_zone():
    act = ActuatorModel(dead_zones=(DeadZone(-40, 40),) * 4)
    lam = act.scales.lambda_phi
    assert actuate(command_from_input(ControlInput(10 * lam, 0, 0, 0), act), act)[0] == 0.0
    out = actuate(command_from_input(ControlInput(30 * lam, 0, 0, 0), act), act)[0]
    assert out == pytest.approx(40 * lam, rel=1e-6)


# wind


def test_wind_without_gusts_is_constant():
    model = WindModel(mean_force=(2.5, -1.0, 0.0), gust_sigma=0.0)
    state = WindState(model)
    for _ in range(100):
        f = wind_step(model, state, 0.002)
    np.testing.assert_array_equal(f, [2.5, -1.0, 0.0])


def test_wind_long_run_mean():
    model = WindModel(gust_sigma=0.4, gust_corr_time=0.5, seed=3)
    state = WindState(model)
    dt, n = 0.002, 100_000
    xs = np.array([wind_step(model, state, dt).copy() for _ in range(n)])
    rho = 1 - dt / model.gust_corr_time
    var = model.gust_sigma**2 / (1 - dt / (2 * model.gust_corr_time))
    se = math.sqrt(var / n * (1 + rho) / (1 - rho))
    assert np.all(np.abs(xs.mean(axis=0) - model.mean_force) < 3 * se)
    assert xs[:, 0].std() == pytest.approx(model.gust_sigma, rel=0.2)


def test_wind_is_seeded():
    model = WindModel(seed=42)
    a, b = WindState(model), WindState(model)
    for _ in range(50):
        np.testing.assert_array_equal(wind_step(model, a, 0.01), wind_step(model, b, 0.01))
    with pytest.raises(ValueError):
        WindModel(gust_corr_time=0.0)


def test_world_is_bit_reproducible():
    def run():
        world = World(wind=WindModel(seed=9))
        for k in range(100):
            world.advance(ActuatorCommand(20 * math.sin(k / 7), 5, 0, 0), 0.02, HOVER_T)
        return world.state

    a, b = run(), run()
    assert a.p.tobytes() == b.p.tobytes() and a.v.tobytes() == b.v.tobytes()
    assert a.wind_force.tobytes() == b.wind_force.tobytes()


# sensors


def _square_path(side, speed, rate):
    """Closed square loop at constant speed, sampled at ``rate``."""
    step = speed / rate
    n_side = int(round(side / step))
    s = np.arange(4 * n_side + 1) * step
    corners = np.array([[0, 0], [side, 0], [side, side], [0, side], [0, 0]], dtype=float)
    seg = np.minimum((s // side).astype(int), 3)
    frac = (s - seg * side) / side
    xy = corners[seg] + frac[:, None] * (corners[seg + 1] - corners[seg])
    return np.column_stack([xy, np.ones(len(s))])


def test_odometry_exact_without_noise():
    state = OdometryState(OdometryEmulator(drift_rate=0.0))
    truth = PlantState(p=np.array([1.0, 2.0, 3.0]), v=np.array([0.1, 0, 0]), time=0.5)
    z = sample_odometry(state, truth)
    np.testing.assert_array_equal(z.p, truth.p)
    np.testing.assert_array_equal(z.v, truth.v)
    assert tuple(z.attitude) == tuple(truth.attitude) and z.stamp == 0.5


def test_drift_norm_constant():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((400_000, 3)) * [1, 1, 0.5]
    assert DRIFT_NORM_MEAN == pytest.approx(np.linalg.norm(x, axis=1).mean(), rel=5e-3)


def test_drift_monte_carlo_calibration():
    path = _square_path(45.0, 2.0, 30.0)
    fractions = []
    for seed in range(200):
        state = OdometryState(OdometryEmulator(seed=seed))
        for p in path:
            z = sample_odometry(state, PlantState(p=p))
        fractions.append(np.linalg.norm(z.p - path[-1]) / state.distance)
    assert state.distance == pytest.approx(180.0)
    assert 0.006 <= np.mean(fractions) <= 0.011


def test_jitter_inside_deadband_adds_no_drift():
    rng = np.random.default_rng(2)
    state = OdometryState(OdometryEmulator(drift_deadband=0.15, seed=3))
    sample_odometry(state, PlantState(p=np.array([0.0, 0.0, 1.0])))
    for _ in range(3000):
        p = np.array([0.0, 0.0, 1.0]) + rng.uniform(-0.08, 0.08, 3)
        z = sample_odometry(state, PlantState(p=p))
    assert state.distance > 100.0
    np.testing.assert_array_equal(state.drift, 0.0)
    np.testing.assert_array_equal(z.p, p)


def test_odometry_noise_is_white():
    emu = OdometryEmulator(sigma_p=0.02, sigma_att=0.01, sigma_v=0.05, drift_rate=0.0, seed=4)
    state = OdometryState(emu)
    truth = PlantState(p=np.array([0.0, 0.0, 1.0]))
    err = np.array([sample_odometry(state, truth).p - truth.p for _ in range(5000)])
    for axis in range(3):
        e = err[:, axis] - err[:, axis].mean()
        for lag in range(1, 6):
            assert abs(np.dot(e[:-lag], e[lag:]) / np.dot(e, e)) < 0.1
    assert err.std() == pytest.approx(0.02, rel=0.05)


def test_imu_at_hover():
    sample = sample_imu(hover_state(), P)
    np.testing.assert_allclose(sample.accel, [0, 0, P.g], atol=1e-12)
    np.testing.assert_allclose(sample.gyro, 0, atol=1e-15)


def test_imu_consistent_with_plant():
    world = World()
    dt = 0.002
    cmd = ActuatorCommand(300, -200, 150, 0)
    world.advance(cmd, 0.3, HOVER_T)
    prev = world.state
    cur = world.advance(cmd, dt, HOVER_T)
    nxt = world.advance(cmd, dt, HOVER_T)
    imu = sample_imu(cur, P)
    world_accel = rotation_from_euler(cur.attitude) @ np.array(imu.accel) - [0, 0, P.g]
    fd = (nxt.v - prev.v) / (2 * dt)
    np.testing.assert_allclose(world_accel, fd, atol=1e-4)
    rates = euler_rate_matrix(cur.attitude.phi, cur.attitude.theta) @ np.array(imu.gyro)
    np.testing.assert_allclose(rates, [*cur.attitude_rates, cur.psi_dot], atol=1e-12)


def test_imu_noise_is_seeded():
    noise = ImuNoise(0.1, 0.01)
    s = hover_state()
    a = sample_imu(s, P, noise, np.random.default_rng(1))
    b = sample_imu(s, P, noise, np.random.default_rng(1))
    assert a == b and a.accel != sample_imu(s, P).accel


# identification against the plant


@pytest.mark.parametrize("channel", ["phi", "theta", "psidot", "vz"])
def test_dead_zone_detected_from_sweep(channel):
    act = VEL.with_dead_zone(channel, DeadZone(-51, 51))
    log = staircase_log(act, channel, np.arange(-100, 101, 5))
    zone = detect_dead_zone(log, channel)
    assert abs(zone.lower + 51) <= 5 and abs(zone.upper - 51) <= 5


def test_no_dead_zone_detects_zero():
    log = staircase_log(VEL, "phi", np.arange(-100, 101, 5))
    assert detect_dead_zone(log, "phi") == DeadZone(0.0, 0.0)


def test_sweep_inside_dead_zone_is_rejected():
    act = VEL.with_dead_zone("phi", DeadZone(-51, 51))
    log = staircase_log(act, "phi", np.arange(-40, 41, 5), dwell=0.3)
    with pytest.raises(IdentificationError, match="not bracketed"):
        detect_dead_zone(log, "phi")


def test_trim_recovered_from_hover_probing():
    act = ActuatorModel(vertical_mode="velocity", trims=TrimOffset(30, 0, 0, 0))
    trim = estimate_trim(trim_log(act, np.arange(-100, 101, 20), dwell=0.6))
    assert abs(trim.c_phi - 30) <= 5
    assert max(abs(trim.c_theta), abs(trim.c_psi_dot), abs(trim.c_vz)) <= 5


def test_unbiased_trim_is_zero():
    trim = estimate_trim(trim_log(VEL, np.arange(-60, 61, 20), dwell=0.6))
    np.testing.assert_allclose(trim.as_array(), 0.0, atol=1e-6)


def test_plant_roll_model_identified_from_chirp():
    log = chirp_log(VEL, "phi", duration=30.0, amplitude=150.0)
    model = fit_channel(log, "phi", 2, VEL.scales)
    assert model.k == pytest.approx(0.975, rel=1e-4)
    assert model.zeta == pytest.approx(0.512, rel=1e-4)
    assert model.omega == pytest.approx(5.200, rel=1e-4)

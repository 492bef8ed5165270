"""Desk-scale stand-in for the real vehicle.

The plant is a rigid body driven through the same path a transmitter
command takes on the real airframe: trim removal, autopilot dead zone,
counts-to-SI scaling, then second-order roll/pitch and first-order
yaw-rate / vertical-velocity responses.  Wind enters as an external
force.  Two sensors are emulated: the autopilot IMU and a drifting
visual-inertial odometry stream.

The inner loops are written with scalar ``math`` because they run at
500 Hz inside every closed-loop scenario.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .frames import ControlInput, EulerAngles, VehicleParams
from .fusion import OdometryMeasurement
from .sysid import (
    CHANNELS,
    ActuatorCommand,
    DeadZone,
    FirstOrderModel,
    FlightLog,
    ScaleParams,
    SecondOrderModel,
    TrimOffset,
)
from .timesync import ImuSample

PLANT_DT = 0.002
VERTICAL_MODES = ("thrust", "velocity")


@dataclass(frozen=True)
class PlantState:
    """Ground-truth vehicle state.

    ``psi_dot`` is the yaw-rate state of the first-order yaw loop and
    ``accel`` the world-frame acceleration at ``time`` (kept for the
    IMU emulator).
    """

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: EulerAngles = EulerAngles(0.0, 0.0, 0.0)
    attitude_rates: tuple = (0.0, 0.0)
    psi_dot: float = 0.0
    wind_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        vals = np.concatenate([self.p, self.v, self.attitude, self.attitude_rates, [self.psi_dot, self.time]])
        if not np.all(np.isfinite(vals)):
            raise ValueError("plant state is not finite")

    def as_vector(self) -> np.ndarray:
        """(p, v, phi, theta, psi), the controller's state layout."""
        return np.concatenate([self.p, self.v, self.attitude])


@dataclass(frozen=True)
class ActuatorModel:
    scales: ScaleParams = ScaleParams()
    dead_zones: tuple = (DeadZone(), DeadZone(), DeadZone(), DeadZone())
    trims: TrimOffset = TrimOffset()
    roll: SecondOrderModel = SecondOrderModel(0.975, 0.512, 5.200)
    pitch: SecondOrderModel = SecondOrderModel(1.052, 0.573, 5.239)
    yaw_rate: FirstOrderModel = FirstOrderModel(1.057, 0.161)
    vertical: FirstOrderModel = FirstOrderModel(1.118, 0.334)
    vertical_mode: str = "thrust"

    def __post_init__(self):
        if len(self.dead_zones) != 4:
            raise ValueError("one dead zone per channel is required")
        if self.vertical_mode not in VERTICAL_MODES:
            raise ValueError(f"vertical_mode must be one of {VERTICAL_MODES}")

    def with_dead_zone(self, channel: str, zone: DeadZone) -> "ActuatorModel":
        zones = list(self.dead_zones)
        zones[CHANNELS.index(channel)] = zone
        return replace(self, dead_zones=tuple(zones))


def actuate(cmd: ActuatorCommand, actuators: ActuatorModel) -> tuple:
    """Counts to physical inputs: subtract trim, dead zone, scale."""
    out = []
    for c, trim, zone, lam in zip(cmd, actuators.trims.as_array(), actuators.dead_zones,
                                  actuators.scales.as_array()):
        c = float(c) - float(trim)
        if zone.lower <= c <= zone.upper:
            c = 0.0
        out.append(lam * c)
    return tuple(out)


def command_from_input(u: ControlInput, actuators: ActuatorModel, vz: float = 0.0) -> ActuatorCommand:
    """Inverse of :func:`actuate` for the controller path.

    Requests that fall inside a dead zone are rounded to whichever is
    nearer, zero or the zone edge.  In thrust mode the vertical channel is
    carried separately, so ``c_vz`` encodes ``vz`` (normally zero).
    """
    want = (u.u_phi, u.u_theta, u.u_psi_dot, vz)
    out = []
    for w, trim, zone, lam in zip(want, actuators.trims.as_array(), actuators.dead_zones,
                                  actuators.scales.as_array()):
        c = w / lam
        if zone.lower < c < 0.0:
            c = zone.lower - 1e-9 if c < 0.5 * zone.lower else 0.0
        elif 0.0 < c < zone.upper:
            c = zone.upper + 1e-9 if c > 0.5 * zone.upper else 0.0
        out.append(c + float(trim))
    return ActuatorCommand(*out).clipped()


# ---------------------------------------------------------------------------
# wind


@dataclass(frozen=True)
class WindModel:
    mean_force: tuple = (2.5, 0.0, 0.0)
    gust_sigma: float = 0.4
    gust_corr_time: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.gust_sigma < 0.0:
            raise ValueError("gust_sigma must be non-negative")
        if self.gust_corr_time <= 0.0:
            raise ValueError("gust_corr_time must be positive")


class WindState:
    """Mutable gust state; starts at the mean force."""

    def __init__(self, model: WindModel):
        self.force = np.array(model.mean_force, dtype=float)
        self.rng = np.random.default_rng(model.seed)


def wind_step(w: WindModel, state: WindState, dt: float) -> np.ndarray:
    """Advance the Ornstein-Uhlenbeck gust by ``dt`` and return the force."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    mean = np.asarray(w.mean_force, dtype=float)
    if w.gust_sigma == 0.0:
        state.force = mean.copy()
        return state.force
    a = dt / w.gust_corr_time
    state.force = state.force + (mean - state.force) * a + w.gust_sigma * math.sqrt(2.0 * a) * state.rng.standard_normal(3)
    return state.force


# ---------------------------------------------------------------------------
# plant


def _derivative(x, u_phi, u_theta, u_r, vert, thrust_mode, f, act, params):
    px, py, pz, vx, vy, vz, phi, theta, psi, dphi, dtheta, dpsi = x
    m, g, kd = params.m, params.g, params.k_d
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    tx = cp * cf * st + sp * sf
    ty = sp * cf * st - cp * sf
    tz = cf * ct
    if thrust_mode:
        thrust = vert
    else:
        # the autopilot's vertical loop tracks the commanded climb rate
        az_cmd = (act.vertical.k * vert - vz) / act.vertical.tau
        thrust = min(max(m * (g + az_cmd) / tz, 0.0), params.thrust_max)
    ax = (tx * thrust - thrust * kd * vx + f[0]) / m
    ay = (ty * thrust - thrust * kd * vy + f[1]) / m
    az = (tz * thrust + f[2]) / m - g
    r, q = act.roll, act.pitch
    ddphi = r.omega * r.omega * (r.k * u_phi - phi) - 2.0 * r.zeta * r.omega * dphi
    ddtheta = q.omega * q.omega * (q.k * u_theta - theta) - 2.0 * q.zeta * q.omega * dtheta
    ddpsi = (act.yaw_rate.k * u_r - dpsi) / act.yaw_rate.tau
    return (vx, vy, vz, ax, ay, az, dphi, dtheta, dpsi, ddphi, ddtheta, ddpsi)


def _pack(s: PlantState):
    return (*s.p.tolist(), *s.v.tolist(), *s.attitude, *s.attitude_rates, s.psi_dot)


def _unpack(x, wind, time, accel) -> PlantState:
    return PlantState(
        np.array(x[0:3]), np.array(x[3:6]), EulerAngles(x[6], x[7], x[8]), (x[9], x[10]), x[11],
        np.array(wind, dtype=float), time, np.array(accel),
    )


def plant_step(s: PlantState, cmd: ActuatorCommand, actuators: ActuatorModel, params: VehicleParams,
               wind_force=(0.0, 0.0, 0.0), dt: float = PLANT_DT, thrust: float | None = None) -> PlantState:
    """One RK4 step of the plant with the command and wind held constant.

    In ``thrust`` vertical mode the collective thrust (N) is passed
    directly as ``thrust``; in ``velocity`` mode ``cmd.c_vz`` is a climb
    rate request and the thrust is solved from the vertical loop.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    u_phi, u_theta, u_r, u_vz = actuate(cmd, actuators)
    thrust_mode = actuators.vertical_mode == "thrust"
    if thrust_mode:
        if thrust is None:
            raise ValueError("thrust mode needs an explicit thrust")
        vert = min(max(float(thrust), 0.0), params.thrust_max)
    else:
        vert = u_vz
    f = tuple(float(c) for c in wind_force)
    x = _pack(s)

    def d(y):
        return _derivative(y, u_phi, u_theta, u_r, vert, thrust_mode, f, actuators, params)

    k1 = d(x)
    k2 = d(tuple(a + 0.5 * dt * b for a, b in zip(x, k1)))
    k3 = d(tuple(a + 0.5 * dt * b for a, b in zip(x, k2)))
    k4 = d(tuple(a + dt * b for a, b in zip(x, k3)))
    xn = tuple(a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4))
    accel = d(xn)[3:6]
    return _unpack(xn, f, s.time + dt, accel)


def hover_state(p=(0.0, 0.0, 0.0), psi: float = 0.0, params: VehicleParams = VehicleParams()) -> PlantState:
    """Vehicle at rest and level at ``p``."""
    return PlantState(p=np.array(p, dtype=float), attitude=EulerAngles(0.0, 0.0, psi))


# ---------------------------------------------------------------------------
# sensors


@dataclass(frozen=True)
class OdometryEmulator:
    """Noise and drift configuration of the visual-inertial odometry."""

    sigma_p: float = 0.0
    sigma_att: float = 0.0
    sigma_v: float = 0.0
    drift_rate: float = 0.0082
    rate: float = 30.0
    seed: int = 1
    calibration_length: float = 180.0
    drift_deadband: float = 0.15

    def __post_init__(self):
        if min(self.sigma_p, self.sigma_att, self.sigma_v) < 0.0:
            raise ValueError("odometry sigmas must be non-negative")
        if not 0.0 <= self.drift_rate < 0.05:
            raise ValueError("drift_rate must lie in [0, 0.05)")
        if self.rate <= 0.0:
            raise ValueError("rate must be positive")
        if self.drift_deadband < 0.0:
            raise ValueError("drift_deadband must be non-negative")

    @property
    def drift_sigma(self) -> float:
        """Random-walk sigma per sqrt(metre) travelled.

        The walk is N(0, s^2 d) per horizontal axis and half that sigma
        vertically, so after a path of length L the expected offset is
        s sqrt(L) E|(n1, n2, n3/2)|.  Solving for s at
        L = calibration_length makes offset / L equal ``drift_rate``.
        """
        return self.drift_rate * math.sqrt(self.calibration_length) / DRIFT_NORM_MEAN


def _mean_norm_half_vertical() -> float:
    # E|x| for x ~ N(0, diag(1, 1, 1/4)): chi_3 mean times the average of
    # sqrt(1 - 3 u^2 / 4) over u ~ U(0, 1) (uniform direction on the sphere)
    a = math.sqrt(3.0) / 2.0
    shape = 0.5 * math.sqrt(1.0 - a * a) + math.asin(a) / (2.0 * a)
    return 2.0 * math.sqrt(2.0 / math.pi) * shape


DRIFT_NORM_MEAN = _mean_norm_half_vertical()

ODOMETRY_PRESETS = {
    "ideal": dict(sigma_p=0.0, sigma_att=0.0, sigma_v=0.0, drift_rate=0.0),
    "indoor": dict(sigma_p=0.01, sigma_att=0.005, sigma_v=0.02, drift_rate=0.0082),
    "outdoor": dict(sigma_p=0.03, sigma_att=0.01, sigma_v=0.05, drift_rate=0.0082),
}


class OdometryState:
    """Accumulated drift and noise source of one odometry emulator."""

    def __init__(self, emulator: OdometryEmulator):
        self.emulator = emulator
        self.rng = np.random.default_rng(emulator.seed)
        self.drift = np.zeros(3)
        self.last_p: np.ndarray | None = None
        self.anchor: np.ndarray | None = None
        self.distance = 0.0


_DRIFT_AXES = np.array([1.0, 1.0, 0.5])


def _anchor_step(state: OdometryState, p: np.ndarray, radius: float) -> float:
    """Drag the anchor to within ``radius`` of ``p``; returns how far it moved."""
    if state.anchor is None:
        state.anchor = p.copy()
        return 0.0
    gap = p - state.anchor
    dist = float(np.linalg.norm(gap))
    if dist <= radius:
        return 0.0
    move = dist - radius
    state.anchor = state.anchor + gap * (move / dist)
    return move


def sample_odometry(state: OdometryState, truth: PlantState) -> OdometryMeasurement:
    """Truth plus white noise plus a distance-driven position random walk.

    Drift is driven by the motion of an anchor dragged behind the vehicle
    at ``drift_deadband``: on paths much longer than the band this is the
    path length, while jitter in place (hover) re-observes the same scene
    and adds no drift.
    """
    emu = state.emulator
    if state.last_p is not None:
        state.distance += float(np.linalg.norm(truth.p - state.last_p))
    state.last_p = truth.p.copy()
    step = _anchor_step(state, truth.p, emu.drift_deadband)
    if emu.drift_rate > 0.0 and step > 0.0:
        state.drift = state.drift + emu.drift_sigma * math.sqrt(step) * _DRIFT_AXES * state.rng.standard_normal(3)
    p = truth.p + state.drift
    att = np.asarray(truth.attitude, dtype=float)
    v = truth.v
    if emu.sigma_p > 0.0:
        p = p + emu.sigma_p * state.rng.standard_normal(3)
    if emu.sigma_att > 0.0:
        att = att + emu.sigma_att * state.rng.standard_normal(3)
    if emu.sigma_v > 0.0:
        v = v + emu.sigma_v * state.rng.standard_normal(3)
    floor = 1e-8
    variances = (max(emu.sigma_p ** 2, floor), max(emu.sigma_att ** 2, floor), max(emu.sigma_v ** 2, floor))
    return OdometryMeasurement(np.array(p), EulerAngles(*att.tolist()), np.array(v), truth.time, variances)


@dataclass(frozen=True)
class ImuNoise:
    accel_sigma: float = 0.0
    gyro_sigma: float = 0.0
    seed: int = 2

    def __post_init__(self):
        if min(self.accel_sigma, self.gyro_sigma) < 0.0:
            raise ValueError("IMU sigmas must be non-negative")


def body_rates(attitude, euler_rates) -> np.ndarray:
    """Body angular velocity from ZYX Euler angles and their rates."""
    phi, theta, _ = attitude
    dphi, dtheta, dpsi = euler_rates
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    return np.array([
        dphi - st * dpsi,
        cf * dtheta + sf * ct * dpsi,
        -sf * dtheta + cf * ct * dpsi,
    ])


def sample_imu(truth: PlantState, params: VehicleParams, noise: ImuNoise = ImuNoise(),
               rng: np.random.Generator | None = None) -> ImuSample:
    """Body-frame specific force and angular rate at ``truth.time``."""
    from .frames import rotation_from_euler

    R = rotation_from_euler(truth.attitude)
    accel = R.T @ (truth.accel + np.array([0.0, 0.0, params.g]))
    gyro = body_rates(truth.attitude, (*truth.attitude_rates, truth.psi_dot))
    if rng is not None:
        if noise.accel_sigma > 0.0:
            accel = accel + noise.accel_sigma * rng.standard_normal(3)
        if noise.gyro_sigma > 0.0:
            gyro = gyro + noise.gyro_sigma * rng.standard_normal(3)
    return ImuSample(truth.time, tuple(gyro.tolist()), tuple(accel.tolist()))


# ---------------------------------------------------------------------------
# world


class World:
    """One mutable simulation: plant, wind and the plant clock."""

    def __init__(self, actuators: ActuatorModel = ActuatorModel(), params: VehicleParams = VehicleParams(),
                 wind: WindModel | None = None, state: PlantState | None = None, dt: float = PLANT_DT):
        self.actuators = actuators
        self.params = params
        self.wind = wind
        self.wind_state = WindState(wind) if wind is not None else None
        self.state = state if state is not None else hover_state()
        self.dt = dt
        if wind is not None:
            self.state = replace(self.state, wind_force=self.wind_state.force.copy())

    def advance(self, cmd: ActuatorCommand, duration: float, thrust: float | None = None) -> PlantState:
        """Hold ``cmd`` for ``duration`` seconds (a whole number of plant steps)."""
        n = max(1, int(round(duration / self.dt)))
        s = self.state
        for _ in range(n):
            f = wind_step(self.wind, self.wind_state, self.dt) if self.wind is not None else (0.0, 0.0, 0.0)
            s = plant_step(s, cmd, self.actuators, self.params, f, self.dt, thrust)
        self.state = s
        return s


# ---------------------------------------------------------------------------
# identification logs


def _log_from(records, t) -> FlightLog:
    cmds = np.array([r[0] for r in records])
    states = [r[1] for r in records]
    return FlightLog(
        t, cmds,
        np.array([tuple(s.attitude) for s in states]),
        np.array([s.p for s in states]),
        np.array([s.v for s in states]),
        psi_dot=np.array([s.psi_dot for s in states]),
    )


def _hold_thrust(actuators: ActuatorModel, params: VehicleParams):
    return params.m * params.g if actuators.vertical_mode == "thrust" else None


def staircase_log(actuators: ActuatorModel, channel: str, levels, dwell: float = 1.0,
                  log_dt: float = 0.01, params: VehicleParams = VehicleParams()) -> FlightLog:
    """Hold each command level on one channel, restarting from hover each time.

    Resetting between levels mirrors a pilot re-levelling the vehicle
    and keeps each level's response free of the previous one.
    """
    idx = CHANNELS.index(channel)
    steps = int(round(dwell / log_dt))
    records, t = [], []
    thrust = _hold_thrust(actuators, params)
    for j, level in enumerate(levels):
        c = [0.0, 0.0, 0.0, 0.0]
        c[idx] = float(level)
        cmd = ActuatorCommand(*c)
        world = World(actuators, params)
        for i in range(steps):
            records.append((cmd, world.state))
            t.append((j * steps + i) * log_dt)
            world.advance(cmd, log_dt, thrust)
    return _log_from(records, np.array(t))


def trim_log(actuators: ActuatorModel, levels, dwell: float = 1.0, log_dt: float = 0.01,
             params: VehicleParams = VehicleParams()) -> FlightLog:
    """Near-hover probing log: every channel in turn is stepped through ``levels``.

    While one channel is probed the others sit at the levels' midpoint.
    """
    levels = [float(v) for v in levels]
    mid = 0.5 * (min(levels) + max(levels))
    steps = int(round(dwell / log_dt))
    thrust = _hold_thrust(actuators, params)
    records, t = [], []
    k = 0
    for idx in range(4):
        for level in levels:
            c = [mid] * 4
            c[idx] = level
            cmd = ActuatorCommand(*c)
            world = World(actuators, params)
            for _ in range(steps):
                records.append((cmd, world.state))
                t.append(k * log_dt)
                k += 1
                world.advance(cmd, log_dt, thrust)
    return _log_from(records, np.array(t))


def chirp_log(actuators: ActuatorModel, channel: str, duration: float = 60.0, amplitude: float = 100.0,
              f0: float = 0.05, f1: float = 8.0, log_dt: float = 0.01, params: VehicleParams = VehicleParams(),
              noise: float = 0.0, seed: int = 0) -> FlightLog:
    """Logarithmic chirp on one channel from hover, for model fitting.

    ``noise`` adds white measurement noise (SI units) to the recorded
    response.
    """
    from scipy.signal import chirp

    idx = CHANNELS.index(channel)
    n = int(round(duration / log_dt))
    t = np.arange(n) * log_dt
    sweep = amplitude * chirp(t, f0, t[-1], f1, method="logarithmic")
    world = World(actuators, params)
    thrust = _hold_thrust(actuators, params)
    records = []
    for c_val in sweep:
        c = [0.0, 0.0, 0.0, 0.0]
        c[idx] = float(c_val)
        cmd = ActuatorCommand(*c)
        records.append((cmd, world.state))
        world.advance(cmd, log_dt, thrust)
    log = _log_from(records, t)
    if noise > 0.0:
        rng = np.random.default_rng(seed)
        log.attitude = log.attitude + noise * rng.standard_normal(log.attitude.shape)
        log.velocity = log.velocity + noise * rng.standard_normal(log.velocity.shape)
        log.psi_dot = log.psi_dot + noise * rng.standard_normal(log.psi_dot.shape)
    return log

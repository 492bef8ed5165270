"""Closed-loop scenarios, run logs and evaluation metrics.

One control tick (50 Hz) does, in order: solve the NMPC from the fused
estimate and the observer's force estimate, convert the input to stick
counts, advance the plant ten 2 ms steps (capturing 30 Hz camera frames
on the way), then push the camera frames through the synchronizer and
the IMU sample through the merger into the fusion filter, and finally
run the disturbance observer on the fused state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import ScenarioConfig
from .frames import VehicleParams, wrap_angle
from .fusion import FusedState, FusionFilter, FusionNoise
from .nmpc import MpcController, MpcWeights, OcpSpec, receding_horizon_step
from .observer import ObserverNoise, ObserverParams, ObserverState, external_force, observer_predict, observer_update
from .simulator import (
    PLANT_DT,
    ActuatorModel,
    OdometryState,
    World,
    actuate,
    chirp_log,
    command_from_input,
    hover_state,
    sample_imu,
    sample_odometry,
)
from .sysid import CHANNELS, FirstOrderModel, SecondOrderModel, fit_channel
from .timesync import ImageMessage, ImageSynchronizer, ImuMerger, SyncMessage
from .trajectory import Trajectory, figure8, hover_reference, read_waypoints, sample_reference, step_reference

CONTROL_DT = 0.02
ODOMETRY_RATE = 30.0
SUBSTEPS = int(round(CONTROL_DT / PLANT_DT))

COLUMNS = (
    "t",
    "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw",
    "est_x", "est_y", "est_z", "est_vx", "est_vy", "est_vz", "est_roll", "est_pitch", "est_yaw",
    "ref_x", "ref_y", "ref_z", "ref_yaw",
    "u_roll", "u_pitch", "u_thrust", "u_yaw_rate",
    "f_x", "f_y", "f_z",
    "w_x", "w_y", "w_z",
)
_C = {name: i for i, name in enumerate(COLUMNS)}
TRUTH = slice(1, 10)
EST = slice(10, 19)
REF = slice(19, 23)


class NumericalAbort(RuntimeError):
    """A non-finite value appeared in the loop; ``records`` holds the last rows."""

    def __init__(self, message: str, records: np.ndarray):
        super().__init__(message)
        self.records = records

    def dump(self) -> str:
        lines = [",".join(COLUMNS)]
        lines += [",".join(repr(float(v)) for v in row) for row in self.records]
        return "\n".join(lines)


@dataclass
class RunLog:
    """Control-rate records, one row per tick, columns as in ``COLUMNS``."""

    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(COLUMNS))

    def __len__(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, _C[name]]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(COLUMNS)
            for row in self.data:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "RunLog":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader, ()))
            if header != COLUMNS:
                raise ValueError(f"{path}: not a run log (unexpected header)")
            rows = [[float(v) for v in row] for row in reader if row]
        return cls(np.array(rows).reshape(-1, len(COLUMNS)))


# ---------------------------------------------------------------------------
# model identification used by the controller and the observer


class IdentifiedModels(NamedTuple):
    roll: SecondOrderModel
    pitch: SecondOrderModel
    roll_first: FirstOrderModel
    pitch_first: FirstOrderModel


def reduce_second_order(m: SecondOrderModel) -> FirstOrderModel:
    """First-order model with the same DC gain and the same mean delay 2 zeta / omega."""
    return FirstOrderModel(m.k, 2.0 * m.zeta / m.omega)


@lru_cache(maxsize=8)
def identify_attitude(actuators: ActuatorModel, params: VehicleParams) -> IdentifiedModels:
    """Chirp the roll and pitch channels of the plant and fit their models."""
    fits = []
    for ch in ("phi", "theta"):
        log = chirp_log(actuators, ch, duration=30.0, amplitude=100.0, f0=0.05, f1=2.0, log_dt=0.02,
                        params=params)
        fits.append(fit_channel(log, ch, 2, actuators.scales))
    return IdentifiedModels(fits[0], fits[1], reduce_second_order(fits[0]), reduce_second_order(fits[1]))


def controller_params(cfg: ScenarioConfig) -> VehicleParams:
    if cfg.controller.model == "table":
        return cfg.vehicle
    ident = identify_attitude(_without_dead_zones(cfg.actuators), cfg.vehicle)
    return replace(cfg.vehicle, k_phi=ident.roll_first.k, tau_phi=ident.roll_first.tau,
                   k_theta=ident.pitch_first.k, tau_theta=ident.pitch_first.tau)


def _without_dead_zones(act: ActuatorModel) -> ActuatorModel:
    # identification is done on a re-trimmed, dead-zone-compensated vehicle
    return ActuatorModel(act.scales, roll=act.roll, pitch=act.pitch, yaw_rate=act.yaw_rate, vertical=act.vertical,
                         vertical_mode=act.vertical_mode)


# ---------------------------------------------------------------------------
# scenarios


def build_reference(cfg: ScenarioConfig) -> Trajectory:
    r = cfg.reference
    if cfg.scenario == "hover":
        return hover_reference(r.position, r.yaw, cfg.duration)
    if cfg.scenario == "step":
        end = tuple(np.add(r.position, r.step))
        return step_reference(r.position, end, r.t_step, cfg.duration, r.yaw)
    if cfg.scenario == "trajectory":
        return read_waypoints(cfg.waypoint_path())
    if cfg.scenario == "figure8":
        kw = {k: getattr(r, k) for k in ("width", "lobe", "height_amp", "period") if getattr(r, k) is not None}
        return figure8(**kw, center=r.position, laps=r.laps)
    raise ValueError(f"no reference for scenario {cfg.scenario!r}")


NOMINAL_SPEED = 1.0


def observer_position_psd(cfg: ScenarioConfig) -> float:
    """Position PSD of the observer, large enough to absorb odometry drift.

    The fused position inherits the odometry random walk, whose variance
    grows by drift_sigma^2 per metre; at a nominal 1 m/s that is a PSD of
    drift_sigma^2 per second.  Without it a drift step is gated as an
    outlier and the gate then locks the observer out.
    """
    if cfg.observer_position_psd is not None:
        return cfg.observer_position_psd
    return max(ObserverNoise.q_position, cfg.odometry.drift_sigma**2 * NOMINAL_SPEED)


def _row(t, truth, est, ref, u, f_hat, wind):
    return [t, *truth.p, *truth.v, *truth.attitude, *est[:9], *ref.position, ref.yaw, *u, *f_hat, *wind]


def run_scenario(cfg: ScenarioConfig) -> RunLog:
    """Run one scenario to completion; deterministic for a given config."""
    if cfg.scenario == "sysid-sweep":
        return run_sysid_sweep(cfg)

    params = cfg.vehicle
    act = cfg.actuators
    ident = identify_attitude(_without_dead_zones(act), params)
    weights = MpcWeights(**{k: v for k, v in (("q", cfg.controller.q), ("r", cfg.controller.r)) if v is not None})
    ocp = OcpSpec(controller_params(cfg), cfg.controller.horizon, cfg.controller.steps, weights)
    ctrl = MpcController(ocp, k_psi=cfg.controller.k_psi, yaw_feedforward=cfg.controller.yaw_feedforward)

    traj = build_reference(cfg)
    sampler = lambda t: sample_reference(traj, t)  # noqa: E731
    start = sampler(0.0)
    world = World(act, params, cfg.wind, hover_state(start.position, start.yaw, params))

    odo = OdometryState(cfg.odometry)
    imu_rng = np.random.default_rng(cfg.imu.seed)
    sync = ImageSynchronizer(cfg.sync_capacity, cfg.camera_offset)
    merger = ImuMerger()
    fnoise = FusionNoise(max(cfg.imu.accel_sigma, 1e-3), max(cfg.imu.gyro_sigma, 1e-4))
    s0 = world.state
    fused0 = FusedState(np.r_[s0.p, s0.v, s0.attitude, np.zeros(3)],
                        np.diag([1e-6] * 9 + [1e-4] * 3), 0.0)
    fusion = FusionFilter(fused0, params.g, fnoise)
    o_noise = ObserverNoise(q_position=observer_position_psd(cfg), q_force=cfg.observer_force_psd)
    o_params = ObserverParams(params, ident.roll, ident.pitch, o_noise)
    obs = ObserverState.initial(s0.p)

    n_ticks = int(round(cfg.duration / CONTROL_DT))
    rows = []
    seq = 0
    next_frame = 0.0
    try:
        for k in range(n_ticks):
            t = k * CONTROL_DT
            est = fusion.state.mean
            f_hat, _ = external_force(obs)
            u, ctrl = receding_horizon_step(ctrl, est[:9], t, sampler, f_hat)
            vz_cmd = 0.0
            if act.vertical_mode == "velocity":
                vz_cmd = float(ctrl.last_plan.predicted_states[1][5]) / act.vertical.k
            cmd = command_from_input(u, act, vz_cmd)
            ref = sampler(t)
            truth = world.state
            rows.append(_row(t, truth, est, ref, u, f_hat, truth.wind_force))
            if not np.all(np.isfinite(rows[-1])):
                raise FloatingPointError(f"non-finite record at t={t:.3f}")

            frames = []
            for _ in range(SUBSTEPS):
                s = world.advance(cmd, PLANT_DT, u.u_T)
                if s.time + 1e-9 >= next_frame:
                    frames.append((seq, sample_odometry(odo, s)))
                    seq += 1
                    next_frame += 1.0 / ODOMETRY_RATE
            s = world.state
            for i, z in frames:
                msgs = [SyncMessage(i, z.stamp), ImageMessage(i, z, z.stamp)]
                if i % 2:
                    msgs.reverse()  # images overtake their sync message on odd frames
                for m in msgs:
                    out = sync.add_sync(m) if isinstance(m, SyncMessage) else sync.add_image(m)
                    if out is not None:
                        fusion.add_odometry(out.payload._replace(stamp=out.stamp))
            imu = sample_imu(s, params, cfg.imu, imu_rng)
            merger.push_accel(imu.stamp, imu.accel)
            for sample in merger.push_gyro(imu.stamp, imu.gyro):
                fusion.add_imu(sample)

            phys = actuate(cmd, act)
            obs = observer_predict(obs, (phys[0], phys[1], u.u_T), o_params, CONTROL_DT, float(fusion.state.mean[8]))
            obs = observer_update(obs, fusion.state.mean[:8], o_params)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        tail = np.array(rows[-50:], dtype=float).reshape(-1, len(COLUMNS))
        raise NumericalAbort(f"numerical failure at tick {len(rows)}: {exc}", tail) from exc

    meta = {
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "duration": cfg.duration,
        "observer_gated": obs.gated,
        "fusion_dropped": fusion.dropped,
        "sync_dropped_images": sync.dropped_images,
        "sync_dropped_syncs": sync.dropped_syncs,
        "imu_dropped": merger.dropped,
        "controller_k_phi": ocp.params.k_phi,
        "controller_tau_phi": ocp.params.tau_phi,
    }
    return RunLog(np.array(rows), meta)


def run_sysid_sweep(cfg: ScenarioConfig) -> RunLog:
    """Open-loop chirp on each channel in turn, then fit every channel.

    The returned log holds the concatenated flights (reference columns
    hold the start pose); the fitted models are in ``meta``.  The
    vertical channel is flown in velocity mode, as its response is a
    vertical speed.
    """
    act = replace(cfg.actuators, vertical_mode="velocity")
    per = cfg.duration / len(CHANNELS)
    rows, t0 = [], 0.0
    meta = {"scenario": cfg.scenario, "seed": cfg.seed, "duration": cfg.duration}
    for i, ch in enumerate(CHANNELS):
        log = chirp_log(act, ch, duration=per, amplitude=100.0, f0=0.05, f1=2.0, log_dt=CONTROL_DT,
                        params=cfg.vehicle, noise=0.0, seed=cfg.seed + i)
        for order in (1, 2) if ch in ("phi", "theta") else (1,):
            model = fit_channel(log, ch, order, act.scales)
            for name, value in zip(type(model).__dataclass_fields__, model.__dict__.values()):
                meta[f"fit.{ch}.order{order}.{name}"] = value
        scales = act.scales.as_array()
        for j in range(len(log)):
            u = log.commands[j] * scales
            rows.append([t0 + log.t[j], *log.position[j], *log.velocity[j], *log.attitude[j],
                         *log.position[j], *log.velocity[j], *log.attitude[j],
                         *log.position[0], 0.0, u[0], u[1], cfg.vehicle.hover_thrust, u[2], 0.0, 0.0, 0.0,
                         0.0, 0.0, 0.0])
        t0 += len(log) * CONTROL_DT
    return RunLog(np.array(rows), meta)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class RmsReport:
    """RMS errors in metres and degrees over ``window`` (seconds)."""

    pose: float
    x: float
    y: float
    z: float
    roll: float
    pitch: float
    yaw: float
    window: tuple
    samples: int

    def as_dict(self, prefix: str = "") -> dict:
        keys = ("pose", "x", "y", "z", "roll", "pitch", "yaw")
        out = {f"{prefix}{k}": getattr(self, k) for k in keys}
        out[f"{prefix}window"] = f"{self.window[0]!r}:{self.window[1]!r}"
        out[f"{prefix}samples"] = self.samples
        return out


KINDS = ("control", "estimation")


def _window_mask(log: RunLog, window) -> tuple:
    if window is None:
        window = (float(log.t[0]), float(log.t[-1])) if len(log) else (0.0, 0.0)
    a, b = float(window[0]), float(window[1])
    mask = (log.t >= a - 1e-9) & (log.t <= b + 1e-9)
    if not mask.any():
        raise ValueError(f"window {a}:{b} contains no samples")
    return mask, (a, b)


def rms_metrics(log: RunLog, kind: str, window=None) -> RmsReport:
    """RMS error of truth against the reference (``control``) or the estimate (``estimation``).

    The control kind has no roll/pitch reference; those fields are NaN.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    mask, window = _window_mask(log, window)
    d = log.data[mask]
    truth = d[:, TRUTH]
    if kind == "control":
        dp = truth[:, 0:3] - d[:, REF][:, 0:3]
        dang = np.column_stack([np.full(len(d), np.nan), np.full(len(d), np.nan), truth[:, 8] - d[:, REF][:, 3]])
    else:
        est = d[:, EST]
        dp = truth[:, 0:3] - est[:, 0:3]
        dang = truth[:, 6:9] - est[:, 6:9]
    dang = np.degrees(wrap_angle(dang))
    rms = np.sqrt(np.mean(dp**2, axis=0))
    pose = float(np.sqrt(np.mean(np.sum(dp**2, axis=1))))
    ang = np.sqrt(np.mean(dang**2, axis=0))
    return RmsReport(pose, *map(float, rms), *map(float, ang), window, int(mask.sum()))


def path_length(log: RunLog) -> float:
    p = log.data[:, TRUTH][:, 0:3]
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))


def drift_metric(log: RunLog) -> float:
    """Final estimate-to-truth offset over the integrated true path length."""
    length = path_length(log)
    if not length > 0.0:
        raise ValueError("drift is undefined for a zero-length path")
    final = log.data[-1]
    return float(np.linalg.norm(final[EST][0:3] - final[TRUTH][0:3]) / length)


def build_report(log: RunLog, window=None) -> dict:
    report = {k: v for k, v in log.meta.items() if not str(k).startswith("fit.")}
    for kind in KINDS:
        report.update(rms_metrics(log, kind, window).as_dict(f"{kind}."))
    try:
        report["drift"] = drift_metric(log)
    except ValueError:
        report["drift"] = float("nan")
    report["path_length"] = path_length(log)
    report.update({k: v for k, v in log.meta.items() if str(k).startswith("fit.")})
    return report


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_report(report: dict, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for k, v in report.items():
            fh.write(f"{k}={_fmt(v)}\n")


def read_report(path) -> dict:
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                k, _, v = line.partition("=")
                out[k] = v
    return out


def export(log: RunLog, report: dict, path) -> tuple:
    """Write ``runlog.csv`` and ``report.txt`` into directory ``path``."""
    if len(log) == 0:
        raise ValueError("cannot export an empty run log")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path, rep_path = out / "runlog.csv", out / "report.txt"
        log.to_csv(csv_path)
        write_report(report, rep_path)
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return csv_path, rep_path


def default_window(cfg: ScenarioConfig) -> tuple:
    return cfg.window if cfg.window is not None else (0.0, cfg.duration)


def is_finite_log(log: RunLog) -> bool:
    return bool(np.all(np.isfinite(log.data)))


def settling_time(log: RunLog, target, band: float, after: float = 0.0) -> float:
    """First time after which the position stays within ``band`` of ``target``; inf if never."""
    p = log.data[:, TRUTH][:, 0:3]
    err = np.linalg.norm(p - np.asarray(target, dtype=float), axis=1)
    outside = np.flatnonzero((err > band) & (log.t >= after))
    if outside.size == 0:
        return after
    last = outside[-1]
    return math.inf if last == len(log) - 1 else float(log.t[last + 1])

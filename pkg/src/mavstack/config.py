"""Scenario configuration files.

A scenario is an INI file.  Every key has a default, so a file only
needs the ``[scenario]`` section; ``section.key`` overrides (as used by
parameter sweeps) are applied on top of the file.

Example::

    [scenario]
    name = hover
    duration = 60
    seed = 3
    window = 10:60

    [sensors]
    preset = indoor

    [wind]
    enabled = true
    mean_force = 2.5, 0, 0
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .frames import VehicleParams
from .simulator import ODOMETRY_PRESETS, VERTICAL_MODES, ActuatorModel, ImuNoise, OdometryEmulator, WindModel
from .sysid import CHANNELS, DeadZone, TrimOffset

SCENARIOS = ("hover", "step", "trajectory", "figure8", "sysid-sweep")
CONTROLLER_MODELS = ("identified", "table")

# IMU noise paired with each odometry preset (per-sample sigma)
IMU_PRESETS = {
    "ideal": (0.0, 0.0),
    "indoor": (0.05, 0.005),
    "outdoor": (0.1, 0.01),
}


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


@dataclass(frozen=True)
class ReferenceConfig:
    position: tuple = (0.0, 0.0, 1.0)
    yaw: float = 0.0
    step: tuple = (1.0, 0.0, 0.0)
    t_step: float = 5.0
    waypoints: str | None = None
    width: float | None = None
    lobe: float | None = None
    height_amp: float | None = None
    period: float | None = None
    laps: int = 1


@dataclass(frozen=True)
class ControllerConfig:
    model: str = "identified"
    horizon: float = 2.0
    steps: int = 20
    k_psi: float = 1.0
    yaw_feedforward: bool = False
    q: tuple | None = None
    r: tuple | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "hover"
    duration: float = 20.0
    seed: int = 0
    window: tuple | None = None
    output: str | None = None
    vehicle: VehicleParams = VehicleParams()
    actuators: ActuatorModel = ActuatorModel()
    controller: ControllerConfig = ControllerConfig()
    wind: WindModel | None = None
    odometry: OdometryEmulator = field(default_factory=lambda: OdometryEmulator(**ODOMETRY_PRESETS["ideal"]))
    imu: ImuNoise = ImuNoise()
    observer_force_psd: float = 0.5
    observer_position_psd: float | None = None
    sync_capacity: int = 32
    camera_offset: float = 0.0
    reference: ReferenceConfig = ReferenceConfig()
    base_dir: str = "."

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if not self.duration > 0.0:
            raise ConfigError("duration must be positive")
        if self.controller.model not in CONTROLLER_MODELS:
            raise ConfigError(f"controller.model must be one of {CONTROLLER_MODELS}")
        if self.window is not None:
            a, b = self.window
            if not 0.0 <= a < b:
                raise ConfigError("window must be a:b with 0 <= a < b")
        if self.scenario == "trajectory":
            if self.reference.waypoints is None:
                raise ConfigError("trajectory scenario needs reference.waypoints")
            if not self.waypoint_path().is_file():
                raise ConfigError(f"waypoint file not found: {self.waypoint_path()}")

    def waypoint_path(self) -> Path:
        p = Path(self.reference.waypoints)
        return p if p.is_absolute() else Path(self.base_dir) / p


# ---------------------------------------------------------------------------
# parsing


def _floats(text: str, n: int | None = None) -> tuple:
    try:
        vals = tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {text!r}")
    return vals


def _range(text: str) -> tuple:
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"expected a:b, got {text!r}")
    return _floats(",".join(parts), 2)


def _get(cp, section, key, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


_KNOWN = {
    "scenario": {"name", "duration", "seed", "window", "output"},
    "vehicle": {"mass", "drag", "gravity", "thrust_max", "attitude_limit"},
    "actuators": {"vertical_mode"} | {f"dead_zone_{c}" for c in CHANNELS} | {f"trim_{c}" for c in CHANNELS},
    "controller": {"model", "horizon", "steps", "k_psi", "yaw_feedforward", "q", "r"},
    "wind": {"enabled", "mean_force", "gust_sigma", "gust_corr_time"},
    "sensors": {"preset", "sigma_p", "sigma_att", "sigma_v", "drift_rate", "accel_sigma", "gyro_sigma"},
    "observer": {"force_psd", "position_psd"},
    "timesync": {"capacity", "offset"},
    "reference": {"position", "yaw", "step", "t_step", "waypoints", "width", "lobe", "height_amp", "period",
                  "laps"},
}


def _check_keys(cp):
    for section in cp.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        extra = set(cp.options(section)) - _KNOWN[section]
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")


def config_from_parser(cp: configparser.ConfigParser, base_dir: str = ".") -> ScenarioConfig:
    try:
        return _build(cp, base_dir)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build(cp: configparser.ConfigParser, base_dir: str) -> ScenarioConfig:
    _check_keys(cp)
    if not cp.has_section("scenario"):
        raise ConfigError("missing [scenario] section")

    vp = VehicleParams()
    m = _get(cp, "vehicle", "mass", float, vp.m)
    g = _get(cp, "vehicle", "gravity", float, vp.g)
    vehicle = VehicleParams(
        m=m,
        k_d=_get(cp, "vehicle", "drag", float, vp.k_d),
        g=g,
        thrust_max=_get(cp, "vehicle", "thrust_max", float, 2.0 * m * g),
        attitude_limit=_get(cp, "vehicle", "attitude_limit", float, vp.attitude_limit),
    )

    zones, trims = [], []
    for c in CHANNELS:
        lo_hi = _get(cp, "actuators", f"dead_zone_{c}", _range, (0.0, 0.0))
        zones.append(DeadZone(*lo_hi))
        trims.append(_get(cp, "actuators", f"trim_{c}", float, 0.0))
    mode = _get(cp, "actuators", "vertical_mode", str, "thrust")
    if mode not in VERTICAL_MODES:
        raise ConfigError(f"actuators.vertical_mode must be one of {VERTICAL_MODES}")
    actuators = ActuatorModel(dead_zones=tuple(zones), trims=TrimOffset(*trims), vertical_mode=mode)

    controller = ControllerConfig(
        model=_get(cp, "controller", "model", str, "identified"),
        horizon=_get(cp, "controller", "horizon", float, 2.0),
        steps=_get(cp, "controller", "steps", int, 20),
        k_psi=_get(cp, "controller", "k_psi", float, 1.0),
        yaw_feedforward=_get(cp, "controller", "yaw_feedforward", _bool, False),
        q=_get(cp, "controller", "q", lambda s: _floats(s, 8), None),
        r=_get(cp, "controller", "r", lambda s: _floats(s, 3), None),
    )

    seed = _get(cp, "scenario", "seed", int, 0)
    wind = None
    if _get(cp, "wind", "enabled", _bool, False):
        wind = WindModel(
            mean_force=_get(cp, "wind", "mean_force", lambda s: _floats(s, 3), (2.5, 0.0, 0.0)),
            gust_sigma=_get(cp, "wind", "gust_sigma", float, 0.4),
            gust_corr_time=_get(cp, "wind", "gust_corr_time", float, 2.0),
            seed=seed * 3,
        )

    preset = _get(cp, "sensors", "preset", str, "ideal")
    if preset not in ODOMETRY_PRESETS:
        raise ConfigError(f"sensors.preset must be one of {sorted(ODOMETRY_PRESETS)}")
    odo_kw = dict(ODOMETRY_PRESETS[preset])
    for key in ("sigma_p", "sigma_att", "sigma_v", "drift_rate"):
        odo_kw[key] = _get(cp, "sensors", key, float, odo_kw[key])
    odometry = OdometryEmulator(**odo_kw, seed=seed * 3 + 1)
    a_sig, g_sig = IMU_PRESETS[preset]
    imu = ImuNoise(_get(cp, "sensors", "accel_sigma", float, a_sig), _get(cp, "sensors", "gyro_sigma", float, g_sig),
                   seed=seed * 3 + 2)

    ref = ReferenceConfig(
        position=_get(cp, "reference", "position", lambda s: _floats(s, 3), (0.0, 0.0, 1.0)),
        yaw=_get(cp, "reference", "yaw", float, 0.0),
        step=_get(cp, "reference", "step", lambda s: _floats(s, 3), (1.0, 0.0, 0.0)),
        t_step=_get(cp, "reference", "t_step", float, 5.0),
        waypoints=_get(cp, "reference", "waypoints", str, None),
        width=_get(cp, "reference", "width", float, None),
        lobe=_get(cp, "reference", "lobe", float, None),
        height_amp=_get(cp, "reference", "height_amp", float, None),
        period=_get(cp, "reference", "period", float, None),
        laps=_get(cp, "reference", "laps", int, 1),
    )

    return ScenarioConfig(
        scenario=_get(cp, "scenario", "name", str, "hover"),
        duration=_get(cp, "scenario", "duration", float, 20.0),
        seed=seed,
        window=_get(cp, "scenario", "window", _range, None),
        output=_get(cp, "scenario", "output", str, None),
        vehicle=vehicle,
        actuators=actuators,
        controller=controller,
        wind=wind,
        odometry=odometry,
        imu=imu,
        observer_force_psd=_get(cp, "observer", "force_psd", float, 0.5),
        observer_position_psd=_get(cp, "observer", "position_psd", float, None),
        sync_capacity=_get(cp, "timesync", "capacity", int, 32),
        camera_offset=_get(cp, "timesync", "offset", float, 0.0),
        reference=ref,
        base_dir=base_dir,
    )


def read_parser(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cp


def apply_overrides(cp: configparser.ConfigParser, overrides: dict) -> configparser.ConfigParser:
    """Copy of ``cp`` with ``{"section.key": value}`` overrides applied."""
    out = configparser.ConfigParser()
    out.read_dict({s: dict(cp.items(s)) for s in cp.sections()})
    for path, value in overrides.items():
        section, _, key = path.partition(".")
        if not key:
            raise ConfigError(f"override {path!r} must be section.key")
        if not out.has_section(section):
            out.add_section(section)
        out.set(section, key, str(value))
    return out


def load_config(path, overrides: dict | None = None) -> ScenarioConfig:
    cp = read_parser(path)
    if overrides:
        cp = apply_overrides(cp, overrides)
    return config_from_parser(cp, str(Path(path).parent))


def config_from_dict(sections: dict, base_dir: str = ".") -> ScenarioConfig:
    """Build a config from ``{"section": {"key": value}}`` (tests, notebooks)."""
    cp = configparser.ConfigParser()
    cp.read_dict({s: {k: str(v) for k, v in kv.items()} for s, kv in sections.items()})
    return config_from_parser(cp, base_dir)

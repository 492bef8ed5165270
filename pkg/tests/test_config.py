import pytest

from mavstack.config import (
    ConfigError,
    apply_overrides,
    config_from_dict,
    load_config,
    read_parser,
)
from mavstack.simulator import ODOMETRY_PRESETS


def test_defaults_from_minimal_file(tmp_path):
    path = tmp_path / "hover.ini"
    path.write_text("[scenario]\nname = hover\n", encoding="utf-8")
    cfg = load_config(path)
    assert cfg.scenario == "hover"
    assert cfg.wind is None
    assert cfg.odometry.drift_rate == 0.0
    assert cfg.controller.steps == 20 and cfg.controller.horizon == 2.0
    assert cfg.base_dir == str(tmp_path)


def test_presets_and_wind():
    cfg = config_from_dict({
        "scenario": {"name": "hover", "seed": 4, "window": "10:60"},
        "sensors": {"preset": "indoor"},
        "wind": {"enabled": "yes", "mean_force": "1, 2, 0"},
    })
    assert cfg.window == (10.0, 60.0)
    assert cfg.odometry.sigma_p == ODOMETRY_PRESETS["indoor"]["sigma_p"]
    assert cfg.imu.accel_sigma > 0.0
    assert cfg.wind.mean_force == (1.0, 2.0, 0.0)
    seeds = {cfg.wind.seed, cfg.odometry.seed, cfg.imu.seed}
    assert len(seeds) == 3


def test_explicit_sensor_values_override_preset():
    cfg = config_from_dict({"scenario": {}, "sensors": {"preset": "outdoor", "sigma_p": "0.2"}})
    assert cfg.odometry.sigma_p == 0.2
    assert cfg.odometry.sigma_v == ODOMETRY_PRESETS["outdoor"]["sigma_v"]


def test_actuator_section():
    cfg = config_from_dict({"scenario": {}, "actuators": {
        "dead_zone_phi": "-51:51", "trim_theta": "12", "vertical_mode": "velocity"}})
    assert cfg.actuators.dead_zones[0].lower == -51.0
    assert cfg.actuators.trims.c_theta == 12.0
    assert cfg.actuators.vertical_mode == "velocity"


@pytest.mark.parametrize("sections", [
    {"vehicle": {"mass": "1"}},
    {"scenario": {"name": "loiter"}},
    {"scenario": {"duration": "0"}},
    {"scenario": {"duration": "abc"}},
    {"scenario": {"window": "5"}},
    {"scenario": {"window": "8:2"}},
    {"scenario": {}, "bogus": {"x": "1"}},
    {"scenario": {}, "vehicle": {"colour": "red"}},
    {"scenario": {}, "sensors": {"preset": "underwater"}},
    {"scenario": {}, "wind": {"enabled": "maybe"}},
    {"scenario": {}, "actuators": {"dead_zone_phi": "5:-5"}},
    {"scenario": {}, "actuators": {"vertical_mode": "rpm"}},
    {"scenario": {}, "controller": {"model": "oracle"}},
    {"scenario": {}, "controller": {"q": "1, 2"}},
    {"scenario": {}, "sensors": {"drift_rate": "0.5"}},
    {"scenario": {"name": "trajectory"}},
    {"scenario": {"name": "trajectory"}, "reference": {"waypoints": "missing.csv"}},
])
def test_invalid_configs_raise_config_error(sections):
    with pytest.raises(ConfigError):
        config_from_dict(sections)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")
    bad = tmp_path / "bad.ini"
    bad.write_text("no section header\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_parser(bad)


def test_waypoints_resolved_relative_to_config(tmp_path):
    (tmp_path / "wp.csv").write_text("t,x,y,z,yaw\n0,0,0,1,0\n5,1,0,1,0\n", encoding="utf-8")
    path = tmp_path / "traj.ini"
    path.write_text("[scenario]\nname = trajectory\n[reference]\nwaypoints = wp.csv\n", encoding="utf-8")
    cfg = load_config(path)
    assert cfg.waypoint_path() == tmp_path / "wp.csv"


def test_overrides_do_not_touch_original(tmp_path):
    path = tmp_path / "hover.ini"
    path.write_text("[scenario]\nname = hover\nseed = 1\n", encoding="utf-8")
    cp = read_parser(path)
    out = apply_overrides(cp, {"scenario.seed": 9, "wind.enabled": "true"})
    assert cp.get("scenario", "seed") == "1"
    assert out.get("scenario", "seed") == "9"
    assert load_config(path, {"scenario.seed": 9}).seed == 9
    with pytest.raises(ConfigError):
        apply_overrides(cp, {"seed": 3})

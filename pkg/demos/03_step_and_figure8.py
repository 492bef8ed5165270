"""A 1 m step and three laps of a figure-8, with control and estimation errors."""

from pathlib import Path

from mavstack.config import load_config
from mavstack.harness import drift_metric, rms_metrics, run_scenario, settling_time

here = Path(__file__).parent / "configs"

cfg = load_config(here / "step.ini")
log = run_scenario(cfg)
t_step = cfg.reference.t_step
settle = settling_time(log, (1.0, 0.0, 1.0), 0.1, after=t_step)
print(f"step: within 10 cm of the target {settle - t_step:.2f} s after the step")
print(f"      transient RMS {rms_metrics(log, 'control', (t_step, t_step + 5)).pose:.3f} m")

cfg = load_config(here / "figure8.ini")
log = run_scenario(cfg)
for kind in ("control", "estimation"):
    r = rms_metrics(log, kind, cfg.window)
    print(f"figure-8 {kind:10s} pose {r.pose:.3f} m  x {r.x:.3f}  y {r.y:.3f}  z {r.z:.3f}  yaw {r.yaw:.2f} deg")
print(f"figure-8 drift {100 * drift_metric(log):.2f}% of the flown distance")

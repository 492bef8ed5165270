"""Hover with and without a steady wind, indoor sensor noise.

The disturbance observer estimates the wind force and the controller
compensates for it, so the hover error should grow only modestly.
"""

from pathlib import Path

import numpy as np

from mavstack.config import load_config
from mavstack.harness import rms_metrics, run_scenario

here = Path(__file__).parent / "configs"
for name in ("hover.ini", "hover_wind.ini"):
    cfg = load_config(here / name)
    log = run_scenario(cfg)
    ctrl = rms_metrics(log, "control", cfg.window)
    est = rms_metrics(log, "estimation", cfg.window)
    print(f"{name:16s} control RMS {ctrl.pose:.4f} m  estimation RMS {est.pose:.4f} m")
    if cfg.wind is not None:
        late = log.t >= cfg.window[0]
        f_hat = log.data[late, 27:30].mean(axis=0)
        wind = log.data[late, 30:33].mean(axis=0)
        print(f"{'':16s} mean force estimate {np.round(f_hat, 3)} N, true mean wind {np.round(wind, 3)} N")

"""Identify the attitude, yaw-rate and vertical channels of the simulated vehicle.

Each channel is excited with a logarithmic chirp from hover.  First and
second order models are fitted to the logged response, and the second
order roll model is reduced to the first-order form the controller uses.
"""

from mavstack.harness import reduce_second_order
from mavstack.simulator import ActuatorModel, chirp_log
from mavstack.sysid import CHANNELS, fit_channel

act = ActuatorModel(vertical_mode="velocity")

print("channel  order  parameters")
for ch in CHANNELS:
    log = chirp_log(act, ch, duration=40.0, f0=0.05, f1=4.0, noise=0.002, seed=1)
    orders = (1, 2) if ch in ("phi", "theta") else (1,)
    for order in orders:
        model = fit_channel(log, ch, order, act.scales)
        print(f"{ch:8s} {order:5d}  {model}")

roll = fit_channel(chirp_log(act, "phi", duration=30.0, f1=2.0, log_dt=0.02), "phi", 2, act.scales)
print("roll reduced to first order for the controller:", reduce_second_order(roll))

"""Monte Carlo of the odometry drift over a 180 m survey pattern.

The emulator's random walk is calibrated so that the mean final offset
is 0.82% of the distance flown at this path length.  Shorter flights
drift proportionally more, as a random walk grows with the square root
of distance.
"""

import numpy as np

from mavstack.simulator import OdometryEmulator, OdometryState, PlantState, sample_odometry


def survey(length, leg=30.0, spacing=5.0, speed=1.5, rate=30.0):
    s = np.arange(int(length / speed * rate) + 1) * speed / rate
    pts = [[0.0, 0.0]]
    while len(pts) < 2 * int(length / leg) + 3:
        x = leg if len(pts) % 4 == 1 else 0.0
        pts += [[x, pts[-1][1]], [x, pts[-1][1] + spacing]]
    pts = np.array(pts)
    cum = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))]
    return np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1]), np.full(s.size, 2.0)])


for length in (20.0, 60.0, 180.0):
    path = survey(length)
    flown = np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1))
    fractions = []
    for seed in range(100):
        state = OdometryState(OdometryEmulator(seed=seed))
        for p in path:
            z = sample_odometry(state, PlantState(p=p))
        fractions.append(np.linalg.norm(z.p - path[-1]) / flown)
    print(f"{flown:6.1f} m path: mean drift {100 * np.mean(fractions):.2f}%  (90th percentile "
          f"{100 * np.percentile(fractions, 90):.2f}%)")

# Why descending while still tracking matters when the object keeps moving.
import numpy as np

from tabletop_grasp.pose_estimation import fold_angle
from tabletop_grasp.tabletop_env import EnvConfig, ScenarioSpec, TabletopEnv


def track(state, gain=1.0, hover=0.015):
    """Proportional controller on the observed target pose."""
    x, y, th, xr, yr, thr = state
    dth = fold_angle(th - thr)
    t = gain * np.array([x - xr, y - yr])
    # the grasp fires once translation is small, so keep moving until aligned
    if abs(dth) > 0.05 and np.abs(t).max() < hover:
        t = t * hover / np.abs(t).max() if t.any() else np.array([hover, 0.0])
    return np.array([np.clip(t[0], -0.05, 0.05),
                     np.clip(t[1], -0.05, 0.05),
                     np.clip(gain * dth, -0.1, 0.1)])


def success_rate(speed, simultaneous, trials=100):
    env = TabletopEnv(ScenarioSpec("moving", velocity=speed), EnvConfig(simultaneous_z=simultaneous))
    hits = 0
    for k in range(trials):
        s = env.reset(seed=k)
        while True:
            r = env.step(track(s))
            s = r.state
            if r.done:
                break
        hits += r.info["event"] == "grasp_success"
    return hits / trials


# Sequential mode freezes the gripper for the whole descent, so the target drifts away
print(f"{'speed':>7}{'sequential':>12}{'simultaneous':>14}")
for speed in (0.0, 0.002, 0.004, 0.006, 0.008):
    print(f"{speed:>7.3f}{success_rate(speed, False):>12.2f}{success_rate(speed, True):>14.2f}")

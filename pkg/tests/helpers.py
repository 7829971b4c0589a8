import math

import numpy as np

from tabletop_grasp.pose_estimation import fold_angle


def scripted_action(state, gain=1.0, hover=0.015, align_tol=0.05):
    """Proportional controller that drives the effector onto the observed target pose.

    The grasp decision only watches translation, so while the angle is still
    off by more than ``align_tol`` the translational command is kept at least
    ``hover`` in size; the effector then hops across the target until aligned.
    """
    x, y, th, xr, yr, thr = np.asarray(state, dtype=float)
    dth = fold_angle(th - thr)
    t = gain * np.array([x - xr, y - yr])
    size = np.abs(t).max()
    if abs(dth) > align_tol and size < hover:
        t = t * (hover / size) if size > 0 else np.array([hover, 0.0])
    return np.array([
        np.clip(t[0], -0.05, 0.05),
        np.clip(t[1], -0.05, 0.05),
        np.clip(gain * dth, -0.1, 0.1),
    ])


def use_scripted_policy(monkeypatch, module):
    """Replace the greedy policy inside ``module`` by the scripted controller."""
    monkeypatch.setattr(module, "act_greedy", lambda params, state: scripted_action(state))


def angle_gap(a, b):
    d = (a - b) % math.pi
    return min(d, math.pi - d)

"""Masks in, policy state out.

A mask source yields one :class:`~tabletop_grasp.tabletop_env.RenderedMask`
per object instance.  :func:`perceive` turns those into world-frame
detections, :func:`select_target` picks what to grasp next and
:func:`build_state` concatenates target and effector poses into the
6-vector the policy consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, List, Optional, Protocol, Sequence

from .maskio import read_mask
from .pose_estimation import AffineCalibration, ObjectPose, estimate_pose, mask_ratio, pixel_to_world
from .ppo_agent import EnvState
from .tabletop_env import Effector, RenderedMask, TabletopEnv

SELECT_MODES = ("any", "by_ratio", "by_class")
# Relative eigen-gap below which a silhouette is treated as round: its
# principal axis is then pixel noise, so the angle is reported as 0.
ISOTROPY_TOL = 0.05


class PerceptionUnavailable(RuntimeError):
    pass


class TargetNotFound(LookupError):
    pass


@dataclass(frozen=True)
class DetectedObject:
    class_label: int
    pose: Optional[ObjectPose]
    ratio: float
    visible: bool
    uid: Optional[int] = None


class MaskSource(Protocol):
    def masks(self) -> Iterable[RenderedMask]:
        ...


class SimulatorMaskSource:
    """Reads instance masks straight from the simulator's renderer."""

    def __init__(self, env: TabletopEnv):
        self.env = env

    def masks(self) -> List[RenderedMask]:
        return self.env.render()


class FileMaskSource:
    """One mask file (graymap + JSON sidecar) per instance."""

    def __init__(self, paths: Sequence):
        self.paths = [Path(p) for p in paths]

    def masks(self) -> List[RenderedMask]:
        out = []
        for i, path in enumerate(self.paths):
            mask, full_area = read_mask(path)
            out.append(RenderedMask(mask, full_area, i))
        return out


def _canonical_angle(pose: ObjectPose, isotropy_tol: float) -> ObjectPose:
    l1, l2 = pose.eigenvalues
    if pose.degenerate or l1 + l2 <= 0 or (l1 - l2) / (l1 + l2) >= isotropy_tol:
        return pose
    return replace(pose, theta=0.0, degenerate=True)


def perceive(source: MaskSource, calib: AffineCalibration,
             isotropy_tol: float = ISOTROPY_TOL) -> List[DetectedObject]:
    try:
        rendered = list(source.masks())
    except Exception as exc:  # any source failure means no perception this cycle
        raise PerceptionUnavailable(f"mask source failed: {exc}") from exc
    detections = []
    for r in rendered:
        ratio = mask_ratio(r.mask, r.full_area)
        if len(r.mask) == 0:
            detections.append(DetectedObject(r.mask.class_label, None, 0.0, False, r.uid))
            continue
        pose = _canonical_angle(pixel_to_world(calib, estimate_pose(r.mask)), isotropy_tol)
        detections.append(DetectedObject(r.mask.class_label, pose, ratio, True, r.uid))
    return detections


def _order_key(d: DetectedObject):
    return (-d.ratio, d.class_label, d.pose.x, d.pose.y, d.pose.theta)


def select_target(detections: Sequence[DetectedObject], mode: str = "any",
                  label: Optional[int] = None) -> DetectedObject:
    """Pick the next object to grasp.

    ``by_ratio`` and ``any`` take the least-occluded visible detection;
    ``by_class`` restricts to ``label`` first.  Ties fall back to the
    smaller class label, then the lexicographic pose, so the choice is
    total and deterministic.
    """
    if mode not in SELECT_MODES:
        raise ValueError(f"unknown selection mode {mode!r}")
    pool = [d for d in detections if d.visible and d.pose is not None]
    if mode == "by_class":
        if label is None:
            raise ValueError("by_class selection needs a label")
        pool = [d for d in pool if d.class_label == label]
    if not pool:
        what = f"class {label}" if mode == "by_class" else "any visible object"
        raise TargetNotFound(f"no detection matches {what}")
    return min(pool, key=_order_key)


def build_state(target: DetectedObject, effector: Effector) -> EnvState:
    if not target.visible or target.pose is None:
        raise TargetNotFound("target is not visible")
    p = target.pose
    return EnvState(p.x, p.y, p.theta, effector.x, effector.y, effector.theta)

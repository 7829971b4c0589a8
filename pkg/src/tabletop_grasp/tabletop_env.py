"""Kinematic 3-DOF tabletop grasping environment.

The effector is a free-flying planar frame ``(x_r, y_r, theta_r)`` above a
normalised ``[-1, 1]^2`` table.  Objects are flat primitive shapes with a
class label; their silhouettes are rasterised onto a pixel grid to stand in
for an instance-segmentation camera.  There is no contact physics: a grasp
succeeds when the gripper is close enough in position and (modulo pi) in
orientation once the grasp decision fires.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .pose_estimation import AffineCalibration, ObjectPose, PixelMask, fold_angle

SCENARIOS = ("static", "multi", "clutter", "semantic", "moving", "perturbed")
EVENTS = ("away", "approaching", "grasp_success", "grasp_failed", "none")


class EnvError(RuntimeError):
    pass


class PlacementFailure(EnvError):
    pass


class EpisodeFinished(EnvError):
    pass


# -- geometry ----------------------------------------------------------------

@dataclass(frozen=True)
class Shape:
    """Flat primitive: ``rectangle(w, h)``, ``ellipse(a, b)`` or ``capsule(l, r)``.

    Rectangle dims are full side lengths, ellipse dims are semi-axes, and a
    capsule is a segment of length ``l`` along the local x axis inflated by
    radius ``r``.
    """

    kind: str
    dims: Tuple[float, float]

    def __post_init__(self):
        if self.kind not in ("rectangle", "ellipse", "capsule"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if len(self.dims) != 2 or min(self.dims) <= 0:
            raise ValueError(f"shape dims must be two positive numbers, got {self.dims}")

    @property
    def bounding_radius(self) -> float:
        p, q = self.dims
        if self.kind == "rectangle":
            return 0.5 * math.hypot(p, q)
        if self.kind == "ellipse":
            return max(p, q)
        return 0.5 * p + q

    @property
    def orientation_free(self) -> bool:
        return self.kind == "ellipse" and self.dims[0] == self.dims[1]

    def contains(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Inside test for points given in the shape's local frame."""
        p, q = self.dims
        if self.kind == "rectangle":
            return (np.abs(u) <= 0.5 * p) & (np.abs(v) <= 0.5 * q)
        if self.kind == "ellipse":
            return (u / p) ** 2 + (v / q) ** 2 <= 1.0
        du = np.maximum(np.abs(u) - 0.5 * p, 0.0)
        return du * du + v * v <= q * q


# Seven household object classes, flattened to their top-view silhouettes.
CLASS_CATALOG = (
    ("detergent_bottle", Shape("capsule", (0.20, 0.06))),
    ("orange", Shape("ellipse", (0.06, 0.06))),
    ("round_can", Shape("ellipse", (0.07, 0.07))),
    ("rectangular_can", Shape("rectangle", (0.22, 0.10))),
    ("cup", Shape("ellipse", (0.08, 0.05))),
    ("pudding_box", Shape("rectangle", (0.18, 0.11))),
    ("drill", Shape("capsule", (0.26, 0.05))),
)
CLASS_NAMES = tuple(name for name, _ in CLASS_CATALOG)


@dataclass(frozen=True)
class Workspace:
    bounds: Tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)  # xmin, xmax, ymin, ymax
    pixel_grid: Tuple[int, int] = (200, 200)  # width, height

    def __post_init__(self):
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("workspace bounds must have positive extent")
        if min(self.pixel_grid) <= 0:
            raise ValueError("pixel grid must be positive")

    @property
    def pixel_size(self) -> Tuple[float, float]:
        xmin, xmax, ymin, ymax = self.bounds
        w, h = self.pixel_grid
        return (xmax - xmin) / w, (ymax - ymin) / h

    @property
    def calib(self) -> AffineCalibration:
        """Pixel ``(col, row)`` to world ``(x, y)``; rows grow downwards."""
        xmin, _, _, ymax = self.bounds
        sx, sy = self.pixel_size
        return AffineCalibration(np.array([[sx, 0.0], [0.0, -sy]]),
                                 np.array([xmin + 0.5 * sx, ymax - 0.5 * sy]))

    def pixel_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        xmin, _, _, ymax = self.bounds
        sx, sy = self.pixel_size
        w, h = self.pixel_grid
        xs = xmin + (np.arange(w) + 0.5) * sx
        ys = ymax - (np.arange(h) + 0.5) * sy
        return np.meshgrid(xs, ys)

    def clamp_xy(self, x: float, y: float) -> Tuple[float, float]:
        xmin, xmax, ymin, ymax = self.bounds
        return min(max(x, xmin), xmax), min(max(y, ymin), ymax)

    def contains_xy(self, x: float, y: float) -> bool:
        xmin, xmax, ymin, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax


@dataclass
class SimObject:
    class_label: int
    shape: Shape
    pose: ObjectPose
    velocity: Tuple[float, float] = (0.0, 0.0)
    full_area: int = 0
    uid: int = 0

    @property
    def orientation_free(self) -> bool:
        return self.shape.orientation_free


@dataclass
class Effector:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    step_limit: float = 0.05
    angle_step_limit: float = 0.1
    grasp_mode: str = "approach"

    @property
    def pose(self) -> Tuple[float, float, float]:
        return self.x, self.y, self.theta


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


@dataclass
class EnvConfig:
    step_limit: float = 0.05
    angle_step_limit: float = 0.1
    eps_act: float = 0.01
    # optional bound on |d_theta| for the grasp decision; None checks translation only
    eps_act_angle: Optional[float] = None
    small_steps: int = 3
    tol_pos: float = 0.02
    tol_ang: float = 0.1
    descend_steps: int = 5
    descend_radius: float = 0.15
    simultaneous_z: bool = False
    max_steps: int = 100
    terminate_on_failed_grasp: bool = True
    random_start: bool = True
    # workspace units per radian of misalignment added to the shaped distance; 0 keeps it planar
    reward_angle_weight: float = 0.0

    def validate(self) -> None:
        if self.reward_angle_weight < 0:
            raise ValueError("reward_angle_weight must be >= 0")
        if min(self.step_limit, self.angle_step_limit, self.eps_act, self.tol_pos, self.tol_ang) <= 0:
            raise ValueError("limits and tolerances must be positive")
        if self.eps_act_angle is not None and self.eps_act_angle <= 0:
            raise ValueError("limits and tolerances must be positive")
        if self.small_steps < 1 or self.descend_steps < 0 or self.max_steps < 1:
            raise ValueError("step counts out of range")


@dataclass
class ScenarioSpec:
    scenario: str = "static"
    object_count: int = 1
    overlap_density: float = 0.0
    target_class: Optional[int] = None
    velocity: float = 0.0
    seed: int = 0
    class_pool: Tuple[int, ...] = tuple(range(len(CLASS_CATALOG)))

    def __post_init__(self):
        self.class_pool = tuple(int(c) for c in self.class_pool)
        self.validate()

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.object_count < 1:
            raise ValueError("object_count must be >= 1")
        if not 0.0 <= self.overlap_density <= 1.0:
            raise ValueError("overlap_density must lie in [0, 1]")
        if self.velocity < 0:
            raise ValueError("velocity is a speed and must be >= 0")
        if not self.class_pool or any(not 0 <= c < len(CLASS_CATALOG) for c in self.class_pool):
            raise ValueError("class_pool must name catalogue classes")


# -- pure operations ---------------------------------------------------------

def distance_to_target(effector: Effector, target: SimObject) -> float:
    return math.hypot(effector.x - target.pose.x, effector.y - target.pose.y)


def shaped_distance(effector: Effector, target: SimObject, angle_weight: float = 0.0) -> float:
    """Distance fed to the reward; optionally charges for misalignment too."""
    d = distance_to_target(effector, target)
    if angle_weight == 0.0 or target.orientation_free:
        return d
    return math.hypot(d, angle_weight * angular_distance_mod_pi(effector.theta, target.pose.theta))


def compute_reward(d_prev: float, d_t: float, event: Optional[str] = None) -> float:
    """Shaped reward: grasp outcome, else a distance penalty with a +-0.1 trend term."""
    if event == "grasp_success":
        return 1.0
    if event == "grasp_failed":
        return -1.0
    if d_t < d_prev:
        return -d_t + 0.1
    return -d_t - 0.1


def reward_event(d_prev: float, d_t: float) -> str:
    return "approaching" if d_t < d_prev else "away"


def angular_distance_mod_pi(a: float, b: float) -> float:
    return abs(fold_angle(a - b))


def check_grasp(effector: Effector, target: SimObject, tol_pos: float = 0.02, tol_ang: float = 0.1) -> bool:
    if distance_to_target(effector, target) > tol_pos:
        return False
    if target.orientation_free:
        return True
    return angular_distance_mod_pi(effector.theta, target.pose.theta) <= tol_ang


def rasterize(workspace: Workspace, obj: SimObject, centers=None) -> np.ndarray:
    """Boolean image of the pixels whose centre lies inside ``obj``."""
    X, Y = centers if centers is not None else workspace.pixel_centers()
    c, s = math.cos(obj.pose.theta), math.sin(obj.pose.theta)
    dx, dy = X - obj.pose.x, Y - obj.pose.y
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return obj.shape.contains(u, v)


@dataclass
class RenderedMask:
    mask: PixelMask
    full_area: int
    uid: int

    @property
    def visible(self) -> bool:
        return len(self.mask) > 0


def render_masks(workspace: Workspace, objects: Sequence[SimObject], centers=None) -> List[RenderedMask]:
    """Per-object visible masks; later objects in ``objects`` lie on top."""
    centers = centers if centers is not None else workspace.pixel_centers()
    w, h = workspace.pixel_grid
    owner = np.full((h, w), -1, dtype=np.int64)
    for i, obj in enumerate(objects):
        owner[rasterize(workspace, obj, centers)] = i
    out = []
    for i, obj in enumerate(objects):
        rows, cols = np.nonzero(owner == i)
        mask = PixelMask(np.column_stack([cols, rows]), obj.class_label)
        out.append(RenderedMask(mask, obj.full_area, obj.uid))
    return out


def advance_moving_target(obj: SimObject, dt: float = 1.0, bounds=(-1.0, 1.0, -1.0, 1.0)) -> SimObject:
    """Constant-velocity motion with mirror reflection at the bounds."""
    vx, vy = obj.velocity
    if vx == 0.0 and vy == 0.0:
        return obj
    xmin, xmax, ymin, ymax = bounds

    def reflect(p, v, lo, hi):
        p = p + v * dt
        while p < lo or p > hi:
            if p > hi:
                p, v = 2.0 * hi - p, -v
            else:
                p, v = 2.0 * lo - p, -v
        return p, v

    x, vx = reflect(obj.pose.x, vx, xmin, xmax)
    y, vy = reflect(obj.pose.y, vy, ymin, ymax)
    return replace(obj, pose=replace(obj.pose, center=(x, y)), velocity=(vx, vy))


def apply_perturbation(effector: Effector, displacement, workspace: Workspace = Workspace()) -> Effector:
    d = np.asarray(displacement, dtype=float).ravel()
    dx, dy = float(d[0]), float(d[1])
    dth = float(d[2]) if len(d) > 2 else 0.0
    x, y = workspace.clamp_xy(effector.x + dx, effector.y + dy)
    theta = fold_angle(effector.theta + dth)
    return replace(effector, x=x, y=y, theta=theta)


# -- environment -------------------------------------------------------------

class TabletopEnv:
    """Single-threaded environment instance with ``reset``/``step``.

    The observation is the 6-vector ``(x, y, theta, x_r, y_r, theta_r)`` of
    the current target object and the effector, taken from simulator ground
    truth.
    """

    def __init__(self, scenario: Optional[ScenarioSpec] = None, config: Optional[EnvConfig] = None,
                 workspace: Optional[Workspace] = None):
        self.scenario = scenario or ScenarioSpec()
        self.config = config or EnvConfig()
        self.config.validate()
        self.workspace = workspace or Workspace()
        self._centers = self.workspace.pixel_centers()
        self.objects: List[SimObject] = []
        self.effector = Effector()
        self.target_uid: Optional[int] = None
        self.rng = np.random.default_rng(self.scenario.seed)
        self.done = True
        self.steps = 0
        self._small = 0
        self._z_progress = 0
        self._d_prev = 0.0

    # scene construction

    def reset(self, seed: Optional[int] = None, scenario: Optional[ScenarioSpec] = None) -> np.ndarray:
        if scenario is not None:
            self.scenario = scenario
        self.rng = np.random.default_rng(self.scenario.seed if seed is None else seed)
        self.objects = self._spawn(self.scenario)
        self._place_effector()
        self.target_uid = self.objects[-1].uid if self.objects else None
        self.start_episode()
        return self.observe()

    def _spawn(self, sc: ScenarioSpec) -> List[SimObject]:
        rng = self.rng
        count = 1 if sc.scenario in ("static", "moving", "perturbed") else sc.object_count
        labels = [int(rng.choice(sc.class_pool)) for _ in range(count)]
        if sc.scenario == "semantic" and sc.target_class is not None and sc.target_class not in labels:
            if sc.target_class in sc.class_pool:
                labels[int(rng.integers(count))] = int(sc.target_class)
        n_overlap = 0
        if sc.scenario == "clutter" and count > 1 and sc.overlap_density > 0:
            n_overlap = min(count - 1, max(1, int(round(sc.overlap_density * count))))
        overlap_slots = set()
        if n_overlap:
            overlap_slots = set(int(i) for i in rng.choice(np.arange(1, count), size=n_overlap, replace=False))
        objects: List[SimObject] = []
        rasters: List[np.ndarray] = []
        for i, label in enumerate(labels):
            shape = CLASS_CATALOG[label][1]
            obj, raster = self._place_one(i, label, shape, objects, rasters, overlap=i in overlap_slots)
            objects.append(obj)
            rasters.append(raster)
        if sc.scenario == "moving" and sc.velocity > 0:
            phi = rng.uniform(-math.pi, math.pi)
            objects[0].velocity = (sc.velocity * math.cos(phi), sc.velocity * math.sin(phi))
        return objects

    def _place_one(self, uid, label, shape, objects, rasters, overlap=False, tries=500):
        xmin, xmax, ymin, ymax = self.workspace.bounds
        r = shape.bounding_radius
        margin = r + 0.05
        for _ in range(tries):
            theta = fold_angle(self.rng.uniform(-math.pi / 2, math.pi / 2))
            if shape.orientation_free:
                theta = 0.0
            if overlap:
                anchor = objects[int(self.rng.integers(len(objects)))]
                phi = self.rng.uniform(-math.pi, math.pi)
                dist = self.rng.uniform(0.2, 0.6) * (r + anchor.shape.bounding_radius)
                x = anchor.pose.x + dist * math.cos(phi)
                y = anchor.pose.y + dist * math.sin(phi)
                if not (xmin + margin <= x <= xmax - margin and ymin + margin <= y <= ymax - margin):
                    continue
            else:
                x = self.rng.uniform(xmin + margin, xmax - margin)
                y = self.rng.uniform(ymin + margin, ymax - margin)
                if any(math.hypot(x - o.pose.x, y - o.pose.y) < r + o.shape.bounding_radius + 0.03
                       for o in objects):
                    continue
            obj = SimObject(label, shape, ObjectPose((x, y), theta), uid=uid)
            raster = rasterize(self.workspace, obj, self._centers)
            if overlap and not any(np.any(raster & other) for other in rasters):
                continue
            obj.full_area = int(raster.sum())
            return obj, raster
        raise PlacementFailure(f"could not place object {uid} after {tries} attempts")

    def _place_effector(self) -> None:
        cfg = self.config
        if cfg.random_start:
            xmin, xmax, ymin, ymax = self.workspace.bounds
            x = self.rng.uniform(xmin + 0.1, xmax - 0.1)
            y = self.rng.uniform(ymin + 0.1, ymax - 0.1)
            th = self.rng.uniform(-math.pi / 2, math.pi / 2)
        else:
            x = y = th = 0.0
        self.effector = Effector(x, y, th, cfg.step_limit, cfg.angle_step_limit)

    # episode control

    @property
    def target(self) -> Optional[SimObject]:
        for o in self.objects:
            if o.uid == self.target_uid:
                return o
        return None

    def set_target(self, uid: int) -> None:
        if not any(o.uid == uid for o in self.objects):
            raise KeyError(f"no object with uid {uid}")
        self.target_uid = uid
        self._d_prev = self._distance()

    def remove_object(self, uid: int) -> None:
        self.objects = [o for o in self.objects if o.uid != uid]
        if self.target_uid == uid:
            self.target_uid = None

    def start_episode(self) -> None:
        """Clear per-episode counters without touching the scene."""
        self.done = False
        self.steps = 0
        self._small = 0
        self._z_progress = 0
        self.effector.grasp_mode = "approach"
        self._d_prev = self._distance() if self.target else 0.0

    def observe(self) -> np.ndarray:
        t = self.target
        e = self.effector
        if t is None:
            return np.array([0.0, 0.0, 0.0, e.x, e.y, e.theta])
        return np.array([t.pose.x, t.pose.y, t.pose.theta, e.x, e.y, e.theta])

    def render(self) -> List[RenderedMask]:
        return render_masks(self.workspace, self.objects, self._centers)

    def perturb(self, displacement) -> None:
        if self.done:
            raise EpisodeFinished("cannot perturb a finished episode")
        self.effector = apply_perturbation(self.effector, displacement, self.workspace)
        self._small = 0
        self._z_progress = 0
        if self.target is not None:
            self._d_prev = self._distance()

    def _advance_objects(self) -> None:
        moved = []
        for o in self.objects:
            n = advance_moving_target(o, 1.0, self.workspace.bounds)
            if n is not o:
                # the reference area follows the object: aliasing changes its pixel count as it moves
                n.full_area = int(rasterize(self.workspace, n, self._centers).sum())
            moved.append(n)
        self.objects = moved

    def step(self, action) -> StepResult:
        if self.done:
            raise EpisodeFinished("episode is over; call reset() or start_episode()")
        if self.target is None:
            raise EnvError("no target selected")
        cfg = self.config
        a = np.asarray(action, dtype=float).ravel()
        if a.shape != (3,) or not np.all(np.isfinite(a)):
            raise ValueError(f"action must be three finite numbers, got {action!r}")
        e = self.effector
        lim = e.step_limit
        dx, dy = float(np.clip(a[0], -lim, lim)), float(np.clip(a[1], -lim, lim))
        dth = float(np.clip(a[2], -e.angle_step_limit, e.angle_step_limit))
        e.x, e.y = self.workspace.clamp_xy(e.x + dx, e.y + dy)
        # a parallel-jaw gripper looks the same after a half turn
        e.theta = fold_angle(e.theta + dth)
        self._advance_objects()
        self.steps += 1

        d_prev = self._d_prev
        d_t = self._distance()
        still = max(abs(a[0]), abs(a[1])) < cfg.eps_act
        if cfg.eps_act_angle is not None:
            still = still and abs(a[2]) < cfg.eps_act_angle
        self._small = self._small + 1 if still else 0
        if cfg.simultaneous_z and distance_to_target(e, self.target) < cfg.descend_radius:
            self._z_progress = min(cfg.descend_steps, self._z_progress + 1)
            e.grasp_mode = "descending"

        info = {"d_prev": d_prev, "truncated": False, "target_uid": self.target_uid}
        done = False
        if self._small >= cfg.small_steps:
            success = self._execute_grasp()
            event = "grasp_success" if success else "grasp_failed"
            d_t = self._distance()
            done = success or cfg.terminate_on_failed_grasp
            self._small = 0
            self._z_progress = 0
            e.grasp_mode = "approach"
        else:
            event = reward_event(d_prev, d_t)
        reward = compute_reward(d_prev, d_t, event)
        self._d_prev = d_t
        if not done and self.steps >= cfg.max_steps:
            done = True
            info["truncated"] = True
        self.done = done
        info.update(d_t=d_t, event=event, steps=self.steps)
        return StepResult(self.observe(), reward, done, info)

    def _distance(self) -> float:
        return shaped_distance(self.effector, self.target, self.config.reward_angle_weight)

    def _execute_grasp(self) -> bool:
        """Lower the gripper and close it; moving objects keep moving meanwhile."""
        cfg = self.config
        remaining = cfg.descend_steps
        if cfg.simultaneous_z:
            remaining = max(0, cfg.descend_steps - self._z_progress)
        self.effector.grasp_mode = "descending"
        for _ in range(remaining):
            self._advance_objects()
        return check_grasp(self.effector, self.target, cfg.tol_pos, cfg.tol_ang)

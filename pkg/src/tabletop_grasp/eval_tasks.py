"""Scripted grasping experiments and their success-rate reports.

Every task runs the greedy policy (action = distribution mean).  Per-trial
seeds are spawned from one master seed, so a report is a deterministic
function of ``(params, seed, settings)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, List, Optional, Sequence

import numpy as np

from .perception_bridge import (
    SimulatorMaskSource,
    TargetNotFound,
    build_state,
    perceive,
    select_target,
)
from .ppo_agent import ActorCritic, act_greedy
from .tabletop_env import CLASS_CATALOG, EnvConfig, ScenarioSpec, TabletopEnv, Workspace

PERCEPTION_MODES = ("once", "every_step", "ground_truth")


@dataclass
class AttemptRecord:
    target_uid: Optional[int]
    class_label: Optional[int]
    ratio: float
    pre_grasp_state: List[float]
    outcome: str  # grasp_success | grasp_failed | timeout | target_not_found
    steps: int
    perturbed: bool = False

    @property
    def success(self) -> bool:
        return self.outcome == "grasp_success"


@dataclass
class TrialRecord:
    trial: int
    seed: int
    objects: int
    attempts: List[AttemptRecord] = field(default_factory=list)
    completed: bool = False


@dataclass
class TaskReport:
    task: str
    settings: dict
    records: List[TrialRecord] = field(default_factory=list)
    gates: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return len(self.records)

    @property
    def grasp_attempts(self) -> int:
        return sum(len(r.attempts) for r in self.records)

    @property
    def grasp_successes(self) -> int:
        return sum(a.success for r in self.records for a in r.attempts)

    @property
    def completions(self) -> int:
        return sum(r.completed for r in self.records)

    @property
    def success_fraction(self) -> Optional[Fraction]:
        """Exact successes / attempts, or ``None`` when nothing was attempted."""
        return Fraction(self.grasp_successes, self.grasp_attempts) if self.grasp_attempts else None

    @property
    def completion_fraction(self) -> Optional[Fraction]:
        return Fraction(self.completions, self.trials) if self.trials else None

    @property
    def success_rate(self) -> Optional[float]:
        f = self.success_fraction
        return None if f is None else float(f)

    @property
    def completion_rate(self) -> Optional[float]:
        f = self.completion_fraction
        return None if f is None else float(f)

    def add_gate(self, name: str, value, threshold, passed: bool) -> None:
        self.gates[name] = {"value": value, "threshold": threshold, "passed": bool(passed)}

    @property
    def gates_passed(self) -> bool:
        return all(g["passed"] for g in self.gates.values())

    def summary(self) -> dict:
        return {
            "task": self.task,
            "trials": self.trials,
            "grasp_attempts": self.grasp_attempts,
            "grasp_successes": self.grasp_successes,
            "completions": self.completions,
            "success_rate": self.success_rate,
            "completion_rate": self.completion_rate,
            "rate_defined": self.grasp_attempts > 0,
            "settings": self.settings,
            "gates": self.gates,
        }

    def to_json(self) -> str:
        doc = self.summary()
        doc["records"] = [asdict(r) for r in self.records]
        return json.dumps(doc, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        cols = ["trial", "seed", "attempt", "target_uid", "class_label", "ratio",
                "x", "y", "theta", "x_r", "y_r", "theta_r", "outcome", "steps", "perturbed", "completed"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.records:
                for i, a in enumerate(r.attempts):
                    st = a.pre_grasp_state or [math.nan] * 6
                    w.writerow([r.trial, r.seed, i, a.target_uid, a.class_label, repr(float(a.ratio)),
                                *(repr(float(v)) for v in st), a.outcome, a.steps, int(a.perturbed),
                                int(r.completed)])


def trial_seeds(seed: int, n: int) -> List[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _eval_env(scenario: ScenarioSpec, env_config: Optional[EnvConfig], workspace: Optional[Workspace] = None,
              **overrides) -> TabletopEnv:
    cfg = EnvConfig(**{**asdict(env_config or EnvConfig()), **overrides})
    return TabletopEnv(scenario, cfg, workspace)


def _perceived_target(env: TabletopEnv, uid: int):
    for d in perceive(SimulatorMaskSource(env), env.workspace.calib):
        if d.uid == uid:
            return d
    raise TargetNotFound(f"object {uid} vanished from the scene")


def run_grasp_episode(env: TabletopEnv, params: ActorCritic, uid: int, ratio: float = 1.0,
                      perception: str = "once", detection=None,
                      perturb_at: Optional[int] = None, displacement=None) -> AttemptRecord:
    """Drive the effector to object ``uid`` until a grasp fires or time runs out.

    ``perception`` chooses where the target pose in the policy state comes
    from: one perception pass before the episode (``once``), a fresh pass
    every step (``every_step``), or simulator ground truth.
    """
    if perception not in PERCEPTION_MODES:
        raise ValueError(f"unknown perception mode {perception!r}")
    env.set_target(uid)
    env.start_episode()
    label = env.target.class_label

    def observe(det):
        if perception == "ground_truth":
            return env.observe()
        if perception == "every_step" or det is None:
            det = _perceived_target(env, uid)
        return build_state(det, env.effector).to_array()

    det = detection if perception == "once" else None
    if perception == "once" and det is None:
        det = _perceived_target(env, uid)
    perturbed = False
    state = observe(det)
    pre_state = state
    while True:
        if perturb_at is not None and not perturbed and env.steps == perturb_at:
            env.perturb(displacement)
            perturbed = True
            state = observe(det)
        pre_state = state
        res = env.step(act_greedy(params, state))
        if res.done:
            break
        try:
            state = observe(det)
        except TargetNotFound:
            return AttemptRecord(uid, label, ratio, [float(v) for v in pre_state], "target_not_found",
                                 env.steps, perturbed)
    event = res.info["event"]
    outcome = event if event in ("grasp_success", "grasp_failed") else "timeout"
    return AttemptRecord(uid, label, ratio, [float(v) for v in pre_state], outcome, env.steps, perturbed)


def _single_object_task(task, params, n_trials, seed, scenario, env_config, perception,
                        settings, episode_kwargs: Optional[Callable] = None, workspace=None,
                        **env_overrides) -> TaskReport:
    report = TaskReport(task, settings)
    env = _eval_env(scenario, env_config, workspace, **env_overrides)
    for i, s in enumerate(trial_seeds(seed, n_trials)):
        env.reset(seed=s)
        rec = TrialRecord(i, s, len(env.objects))
        obj = env.objects[0]
        kwargs = episode_kwargs(env) if episode_kwargs else {}
        rec.attempts.append(run_grasp_episode(env, params, obj.uid, 1.0, perception, **kwargs))
        rec.completed = rec.attempts[-1].success
        report.records.append(rec)
    return report


def run_static(params: ActorCritic, n_trials: int = 100, seed: int = 0, perception: str = "once",
               env_config: Optional[EnvConfig] = None, workspace: Optional[Workspace] = None) -> TaskReport:
    """One randomly posed object per trial."""
    settings = {"n_trials": n_trials, "seed": seed, "perception": perception}
    return _single_object_task("static", params, n_trials, seed, ScenarioSpec("static"), env_config,
                               perception, settings, workspace=workspace)


def _clear_scene(env: TabletopEnv, params: ActorCritic, rec: TrialRecord, perception: str,
                 budget: int) -> None:
    """Pick objects by descending mask ratio until the table is empty or the budget is spent."""
    while env.objects and len(rec.attempts) < budget:
        detections = perceive(SimulatorMaskSource(env), env.workspace.calib)
        try:
            target = select_target(detections, "by_ratio")
        except TargetNotFound:
            break
        attempt = run_grasp_episode(env, params, target.uid, target.ratio, perception, detection=target)
        rec.attempts.append(attempt)
        if attempt.success:
            env.remove_object(target.uid)
    rec.completed = not env.objects


def run_multi_object(params: ActorCritic, object_count: int = 10, n_trials: int = 10, seed: int = 0,
                     perception: str = "once", env_config: Optional[EnvConfig] = None,
                     overlap_density: float = 0.0, task: str = "multi",
                     workspace: Optional[Workspace] = None) -> TaskReport:
    """Sequentially clear scenes of ``object_count`` objects.

    The attempt budget per scene is three times the object count; a scene
    counts as completed only when no object is left.
    """
    scenario_name = "clutter" if overlap_density > 0 else "multi"
    scenario = ScenarioSpec(scenario_name, object_count=object_count, overlap_density=overlap_density)
    settings = {"object_count": object_count, "n_trials": n_trials, "seed": seed,
                "perception": perception, "overlap_density": overlap_density,
                "attempt_budget": 3 * object_count}
    report = TaskReport(task, settings)
    env = _eval_env(scenario, env_config, workspace)
    for i, s in enumerate(trial_seeds(seed, n_trials)):
        env.reset(seed=s)
        rec = TrialRecord(i, s, len(env.objects))
        _clear_scene(env, params, rec, perception, 3 * object_count)
        report.records.append(rec)
    return report


def run_clutter(params: ActorCritic, overlap_density: float = 0.5, n_trials: int = 10, seed: int = 0,
                object_count: int = 10, perception: str = "once",
                env_config: Optional[EnvConfig] = None, workspace: Optional[Workspace] = None) -> TaskReport:
    """Like :func:`run_multi_object` with objects stacked on each other."""
    return run_multi_object(params, object_count, n_trials, seed, perception, env_config,
                            overlap_density=overlap_density, task="clutter", workspace=workspace)


def run_semantic(params: ActorCritic, target_class: Optional[int] = None, n_trials: int = 60,
                 seed: int = 0, object_count: int = 10, perception: str = "once",
                 env_config: Optional[EnvConfig] = None,
                 class_pool: Sequence[int] = tuple(range(len(CLASS_CATALOG))),
                 workspace: Optional[Workspace] = None) -> TaskReport:
    """Grasp one instructed class among distractors, one attempt per trial.

    With ``target_class=None`` each trial instructs the class of a randomly
    chosen object in its scene.  Instructions that match no visible object
    count as failed attempts.
    """
    settings = {"target_class": target_class, "n_trials": n_trials, "seed": seed,
                "object_count": object_count, "perception": perception, "class_pool": list(class_pool)}
    report = TaskReport("semantic", settings)
    scenario = ScenarioSpec("semantic", object_count=object_count, target_class=target_class,
                            class_pool=tuple(class_pool))
    env = _eval_env(scenario, env_config, workspace)
    for i, s in enumerate(trial_seeds(seed, n_trials)):
        env.reset(seed=s)
        rec = TrialRecord(i, s, len(env.objects))
        wanted = target_class
        if wanted is None:
            wanted = env.objects[int(env.rng.integers(len(env.objects)))].class_label
        detections = perceive(SimulatorMaskSource(env), env.workspace.calib)
        try:
            target = select_target(detections, "by_class", wanted)
        except TargetNotFound:
            rec.attempts.append(AttemptRecord(None, wanted, 0.0, [], "target_not_found", 0))
        else:
            rec.attempts.append(run_grasp_episode(env, params, target.uid, target.ratio, perception,
                                                  detection=target))
        rec.completed = rec.attempts[-1].success
        report.records.append(rec)
    return report


def run_moving(params: ActorCritic, speed: float = 0.005, simultaneous_z: bool = True,
               n_trials: int = 100, seed: int = 0, perception: str = "every_step",
               env_config: Optional[EnvConfig] = None, workspace: Optional[Workspace] = None) -> TaskReport:
    """Grasp a target translating at ``speed`` units per step.

    Without simultaneous descent the gripper stops tracking while it lowers
    for ``descend_steps``; with it, the descent happens during the final
    approach and the gripper closes as soon as the grasp decision fires.
    """
    settings = {"speed": speed, "simultaneous_z": simultaneous_z, "n_trials": n_trials, "seed": seed,
                "perception": perception}
    return _single_object_task("moving", params, n_trials, seed, ScenarioSpec("moving", velocity=speed),
                               env_config, perception, settings, workspace=workspace,
                               simultaneous_z=simultaneous_z)


def run_perturbed(params: ActorCritic, displacement_scale: float = 0.3, n_trials: int = 100,
                  seed: int = 0, perception: str = "once", env_config: Optional[EnvConfig] = None,
                  window=(3, 15), workspace: Optional[Workspace] = None) -> TaskReport:
    """Teleport the effector once per episode at a random step inside ``window``."""
    settings = {"displacement_scale": displacement_scale, "n_trials": n_trials, "seed": seed,
                "perception": perception, "window": list(window)}

    def kwargs(env):
        phi = env.rng.uniform(-math.pi, math.pi)
        at = int(env.rng.integers(window[0], window[1] + 1))
        disp = (displacement_scale * math.cos(phi), displacement_scale * math.sin(phi))
        return {"perturb_at": at, "displacement": disp}

    return _single_object_task("perturbed", params, n_trials, seed, ScenarioSpec("perturbed"), env_config,
                               perception, settings, episode_kwargs=kwargs, workspace=workspace)

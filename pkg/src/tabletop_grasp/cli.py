"""Command line: ``train``, ``eval``, ``pose`` and ``inspect``.

Exit codes
----------
0  success (for ``eval``: every gate passed)
1  ``eval`` gate failed, or ``pose`` could not read some file
2  bad configuration, checkpoint or task name
3  training aborted on a non-finite value (last good checkpoint kept)
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from . import eval_tasks
from .config import TASKS, ConfigError, RunConfig, load_config
from .maskio import MaskFormatError, pose_record, pose_record_for_file, read_mask
from .nn_core import CheckpointError
from .pose_estimation import EmptyMask, estimate_pose, mask_ratio, pixel_to_world
from .ppo_agent import TrainingAborted, load_agent, save_agent, train, write_log_csv
from .tabletop_env import TabletopEnv

EXIT_OK, EXIT_GATE, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3

REWARDS_CSV = "rewards.csv"
SNAPSHOT = "resolved_config.yaml"
FINAL_CHECKPOINT = "final.json"
LAST_GOOD_CHECKPOINT = "last_good.json"


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _with_overrides(cfg: RunConfig, args) -> RunConfig:
    """Apply command-line flags on top of the file values."""
    try:
        return _apply_flags(cfg, args)
    except ValueError as exc:
        raise ConfigError(str(exc), "command line") from exc


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "episodes", None) is not None:
        cfg = replace(cfg, ppo=replace(cfg.ppo, episodes=args.episodes))
    ev = {}
    for flag, key in (("trials", "n_trials"), ("target_class", "target_class"), ("perception", "perception")):
        if getattr(args, flag, None) is not None:
            ev[key] = getattr(args, flag)
    if ev:
        cfg = replace(cfg, eval=replace(cfg.eval, **ev))
    cfg.validate()
    return cfg


def _prepare(args) -> Tuple[RunConfig, Path]:
    cfg = _with_overrides(load_config(args.config), args)
    out = cfg.output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # the snapshot records the effective output directory as well
    cfg = replace(cfg, output=replace(cfg.output, dir=str(out)))
    return cfg, out


# -- train -------------------------------------------------------------------

def cmd_train(args) -> int:
    try:
        cfg, out = _prepare(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    (out / SNAPSHOT).write_text(cfg.to_yaml())
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    env = TabletopEnv(cfg.train_scenario(), cfg.train_env_config(), cfg.workspace.build())
    try:
        params, rows = train(env, cfg.ppo, log_path=out / REWARDS_CSV, checkpoint_dir=ckpt_dir,
                             checkpoint_every=cfg.train.checkpoint_every)
    except TrainingAborted as exc:
        save_agent(ckpt_dir / LAST_GOOD_CHECKPOINT, exc.params, None, exc.episode, cfg.ppo)
        write_log_csv(out / REWARDS_CSV, exc.log_rows)
        _err(f"training aborted: {exc}; last good parameters in {ckpt_dir / LAST_GOOD_CHECKPOINT}")
        return EXIT_ABORT
    save_agent(out / FINAL_CHECKPOINT, params, None, len(rows), cfg.ppo)
    if rows:
        tail = rows[-min(20, len(rows)):]
        mean = sum(r["total_reward"] for r in tail) / len(tail)
        print(f"trained {len(rows)} episodes; mean reward of the last {len(tail)}: {mean:.3f}")
    else:
        print("trained 0 episodes")
    print(f"checkpoint: {out / FINAL_CHECKPOINT}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def run_task(params, task: str, cfg: RunConfig) -> List[eval_tasks.TaskReport]:
    """Run one evaluation task with ``cfg`` and attach its gates.

    Returns the reports produced; ``moving`` yields the simultaneous-descent
    run and its sequential baseline on the same trial seeds.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    ev, g = cfg.eval, cfg.gates
    common = {"seed": cfg.seed, "env_config": cfg.env, "workspace": cfg.workspace.build()}
    if ev.perception is not None:
        common["perception"] = ev.perception
    if ev.n_trials is not None:
        common["n_trials"] = ev.n_trials

    if task == "static":
        rep = eval_tasks.run_static(params, **common)
        _gate(rep, "success", rep.success_rate, g.static_success)
        return [rep]
    if task == "multi":
        rep = eval_tasks.run_multi_object(params, object_count=ev.object_count, **common)
        _gate(rep, "completion", rep.completion_rate, g.multi_completion)
        return [rep]
    if task == "clutter":
        rep = eval_tasks.run_clutter(params, overlap_density=ev.overlap_density, object_count=ev.object_count,
                                     **common)
        _gate(rep, "completion", rep.completion_rate, g.clutter_completion)
        _gate(rep, "success", rep.success_rate, g.clutter_success)
        return [rep]
    if task == "semantic":
        rep = eval_tasks.run_semantic(params, target_class=ev.target_class, object_count=ev.object_count,
                                      class_pool=ev.class_pool, **common)
        _gate(rep, "success", rep.success_rate, g.semantic_success)
        return [rep]
    if task == "moving":
        sim = eval_tasks.run_moving(params, speed=ev.speed, simultaneous_z=True, **common)
        seq = eval_tasks.run_moving(params, speed=ev.speed, simultaneous_z=False, **common)
        sim.task, seq.task = "moving_simultaneous", "moving_sequential"
        margin = None
        if sim.success_rate is not None and seq.success_rate is not None:
            margin = sim.success_rate - seq.success_rate
        _gate(sim, "margin_over_sequential", margin, g.moving_margin)
        return [sim, seq]
    rep = eval_tasks.run_perturbed(params, displacement_scale=ev.displacement_scale, **common)
    _gate(rep, "success", rep.success_rate, g.perturbed_success)
    return [rep]


def _gate(report, name: str, value: Optional[float], threshold: float) -> None:
    # an undefined rate (no attempts) never passes
    report.add_gate(name, value, threshold, value is not None and value >= threshold - 1e-12)


def _print_report(rep) -> None:
    s = rep.summary()
    rate = "n/a" if s["success_rate"] is None else f"{s['success_rate']:.1%}"
    comp = "n/a" if s["completion_rate"] is None else f"{s['completion_rate']:.1%}"
    print(f"[{rep.task}] trials={s['trials']} attempts={s['grasp_attempts']} "
          f"successes={s['grasp_successes']} success_rate={rate} completion_rate={comp}")
    for name, gate in rep.gates.items():
        value = "n/a" if gate["value"] is None else f"{gate['value']:.3f}"
        verdict = "PASS" if gate["passed"] else "FAIL"
        print(f"  gate {name}: {value} >= {gate['threshold']:.3f} {verdict}")


def cmd_eval(args) -> int:
    if args.task not in TASKS:
        _err(f"unknown task {args.task!r}; expected one of {', '.join(TASKS)}")
        return EXIT_USAGE
    try:
        params, _ = load_agent(args.checkpoint)
        cfg, out = _prepare(args)
    except (ConfigError, CheckpointError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    reports = run_task(params, args.task, cfg)
    (out / f"eval_{args.task}_config.yaml").write_text(cfg.to_yaml())
    for rep in reports:
        _print_report(rep)
        rep.write_csv(out / f"eval_{rep.task}.csv")
        (out / f"eval_{rep.task}.json").write_text(rep.to_json() + "\n")
    return EXIT_OK if all(r.gates_passed for r in reports) else EXIT_GATE


# -- pose --------------------------------------------------------------------

def cmd_pose(args) -> int:
    calib = None
    if args.world:
        try:
            calib = load_config(args.config).workspace.build().calib
        except ConfigError as exc:
            _err(str(exc))
            return EXIT_USAGE
    failed = 0
    for path in args.masks:
        try:
            if calib is None:
                rec = pose_record_for_file(path)
            else:
                mask, full_area = read_mask(path)
                if len(mask) == 0:
                    raise EmptyMask(f"{path}: mask has no pixels")
                rec = pose_record(mask.class_label, pixel_to_world(calib, estimate_pose(mask)),
                                  mask_ratio(mask, full_area))
        except (OSError, MaskFormatError, EmptyMask, ValueError) as exc:
            failed += 1
            _err(f"{path}: {exc}")
            continue
        print(json.dumps({"file": str(path), **rec}))
    return EXIT_GATE if failed else EXIT_OK


# -- inspect -----------------------------------------------------------------

def cmd_inspect(args) -> int:
    try:
        params, ckpt = load_agent(args.checkpoint)
    except CheckpointError as exc:
        _err(str(exc))
        return EXIT_USAGE
    doc = {
        "file": str(args.checkpoint),
        "episodes": ckpt.episodes,
        "architecture": params.architecture(),
        "parameters": sum(n.num_params() for n in params.networks().values()),
        "has_optimizer_state": bool(ckpt.optimizers),
        "metadata": ckpt.metadata,
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tabletop-grasp", description="PPO grasping on a simulated tabletop.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an actor-critic")
    t.add_argument("--config", help="YAML run configuration")
    t.add_argument("--out", help="output directory (overrides config and $TABLETOP_GRASP_OUT)")
    t.add_argument("--seed", type=int)
    t.add_argument("--episodes", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run one evaluation task and check its gates")
    e.add_argument("checkpoint")
    e.add_argument("task", help=f"one of {', '.join(TASKS)}")
    e.add_argument("--config")
    e.add_argument("--out")
    e.add_argument("--seed", type=int)
    e.add_argument("--trials", type=int)
    e.add_argument("--class", dest="target_class", type=int, help="instructed class for 'semantic'")
    e.add_argument("--perception", choices=eval_tasks.PERCEPTION_MODES)
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("pose", help="estimate object poses from mask files")
    q.add_argument("masks", nargs="+")
    q.add_argument("--world", action="store_true", help="report world coordinates using the workspace calibration")
    q.add_argument("--config")
    q.set_defaults(func=cmd_pose)

    i = sub.add_parser("inspect", help="print checkpoint metadata")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

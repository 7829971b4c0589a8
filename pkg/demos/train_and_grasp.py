# Train a small actor-critic on the single-object scene, then grade it greedily.
import sys

import numpy as np

from tabletop_grasp.config import load_config
from tabletop_grasp.eval_tasks import run_static
from tabletop_grasp.ppo_agent import train
from tabletop_grasp.tabletop_env import TabletopEnv

# The recipe used by the acceptance suite; pass another YAML file to try your own
cfg = load_config(sys.argv[1] if len(sys.argv) > 1 else "configs/acceptance.yaml")
episodes = int(sys.argv[2]) if len(sys.argv) > 2 else 400
ppo = cfg.ppo.__class__(**{**cfg.ppo.__dict__, "episodes": episodes})

env = TabletopEnv(cfg.train_scenario(), cfg.train_env_config(), cfg.workspace.build())
params, rows = train(env, ppo)

# Episode rewards in blocks of 50
rewards = np.array([r["total_reward"] for r in rows])
success = np.array([r["success"] for r in rows])
for start in range(0, len(rows), 50):
    block = slice(start, start + 50)
    print(f"episodes {start + 1:>5}-{min(start + 50, len(rows)):>5}: "
          f"mean reward {rewards[block].mean():8.2f}  grasp success {success[block].mean():.2f}")

# Greedy evaluation: the action is the policy mean
report = run_static(params, n_trials=50, seed=1, env_config=cfg.env)
print(f"greedy success {report.grasp_successes}/{report.trials}")
outcomes = {}
for rec in report.records:
    outcomes[rec.attempts[0].outcome] = outcomes.get(rec.attempts[0].outcome, 0) + 1
print(outcomes)

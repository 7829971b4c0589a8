import json
import math
from fractions import Fraction

import pytest

from tabletop_grasp import eval_tasks
from tabletop_grasp.eval_tasks import (
    AttemptRecord,
    TaskReport,
    TrialRecord,
    run_clutter,
    run_grasp_episode,
    run_moving,
    run_multi_object,
    run_perturbed,
    run_semantic,
    run_static,
    trial_seeds,
)
from tabletop_grasp.ppo_agent import init_actor_critic
from tabletop_grasp.tabletop_env import EnvConfig, ScenarioSpec, TabletopEnv

from helpers import use_scripted_policy

PARAMS = init_actor_critic(0, hidden=8)


@pytest.fixture
def scripted(monkeypatch):
    use_scripted_policy(monkeypatch, eval_tasks)


def attempt(outcome):
    return AttemptRecord(0, 0, 1.0, [0.0] * 6, outcome, 5)


class TestReport:
    def test_exact_rates(self):
        r = TaskReport("x", {})
        r.records = [TrialRecord(0, 1, 1, [attempt("grasp_success")], True),
                     TrialRecord(1, 2, 1, [attempt("grasp_failed"), attempt("grasp_success")], True),
                     TrialRecord(2, 3, 1, [attempt("timeout")], False)]
        assert r.success_fraction == Fraction(2, 4)
        assert r.completion_fraction == Fraction(2, 3)
        assert r.success_rate == 0.5

    def test_undefined_rate(self):
        r = TaskReport("x", {})
        r.records = [TrialRecord(0, 1, 1)]
        assert r.success_rate is None and r.summary()["rate_defined"] is False

    def test_gates(self):
        r = TaskReport("x", {})
        r.add_gate("a", 0.9, 0.8, True)
        assert r.gates_passed
        r.add_gate("b", 0.1, 0.8, False)
        assert not r.gates_passed

    def test_json_and_csv(self, tmp_path):
        r = TaskReport("x", {"seed": 1})
        r.records = [TrialRecord(0, 1, 1, [attempt("grasp_success")], True)]
        doc = json.loads(r.to_json())
        assert doc["grasp_successes"] == 1 and doc["records"][0]["attempts"][0]["outcome"] == "grasp_success"
        r.write_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0].startswith("trial,seed,attempt") and len(lines) == 2

    def test_trial_seeds(self):
        assert trial_seeds(3, 5) == trial_seeds(3, 5)
        assert len(set(trial_seeds(3, 50))) == 50


class TestEpisodes:
    def test_scripted_static(self, scripted):
        rep = run_static(PARAMS, n_trials=20, seed=1)
        assert rep.grasp_successes == 20

    def test_untrained_policy_times_out_or_fails(self):
        rep = run_static(PARAMS, n_trials=3, seed=1)
        assert all(a.outcome in ("timeout", "grasp_failed") for r in rep.records for a in r.attempts)

    def test_perception_modes_agree_on_static(self, scripted):
        env = TabletopEnv(ScenarioSpec("static"), EnvConfig())
        outcomes = []
        for mode in ("once", "every_step", "ground_truth"):
            env.reset(seed=7)
            outcomes.append(run_grasp_episode(env, PARAMS, env.objects[0].uid, perception=mode).outcome)
        assert outcomes == ["grasp_success"] * 3

    def test_bad_perception_mode(self):
        env = TabletopEnv(ScenarioSpec("static"))
        env.reset(seed=0)
        with pytest.raises(ValueError):
            run_grasp_episode(env, PARAMS, 0, perception="telepathy")

    def test_multi_object_completion(self, scripted):
        rep = run_multi_object(PARAMS, object_count=5, n_trials=3, seed=2)
        assert rep.completions == 3
        assert all(len(r.attempts) >= 5 for r in rep.records)

    def test_clutter_picks_unoccluded_first(self, scripted):
        rep = run_clutter(PARAMS, overlap_density=0.5, object_count=6, n_trials=3, seed=2)
        for r in rep.records:
            assert r.attempts[0].ratio == 1.0

    def test_semantic_targets_instructed_class(self, scripted):
        rep = run_semantic(PARAMS, target_class=None, n_trials=6, object_count=5, seed=4)
        assert rep.trials == 6
        assert all(len(r.attempts) == 1 for r in rep.records)
        assert rep.grasp_successes >= 5

    def test_semantic_missing_class_counts_as_failure(self, scripted):
        rep = run_semantic(PARAMS, target_class=6, n_trials=3, object_count=3, seed=0, class_pool=(1, 2))
        assert all(r.attempts[0].outcome == "target_not_found" for r in rep.records)
        assert rep.success_rate == 0.0

    def test_moving_simultaneous_descent_helps(self, scripted):
        a = run_moving(PARAMS, speed=0.005, simultaneous_z=True, n_trials=20, seed=3)
        b = run_moving(PARAMS, speed=0.005, simultaneous_z=False, n_trials=20, seed=3)
        assert a.grasp_successes > b.grasp_successes

    def test_perturbed_records_flag(self, scripted):
        rep = run_perturbed(PARAMS, n_trials=10, seed=5)
        # a grasp that fires before the scheduled step is never perturbed
        assert sum(r.attempts[0].perturbed for r in rep.records) >= 7
        assert rep.grasp_successes == 10

    def test_reports_deterministic(self, scripted, tmp_path):
        for name in ("a", "b"):
            run_clutter(PARAMS, n_trials=2, object_count=4, seed=9).write_csv(tmp_path / f"{name}.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_pre_grasp_state_logged(self, scripted):
        rep = run_static(PARAMS, n_trials=1, seed=0)
        st = rep.records[0].attempts[0].pre_grasp_state
        assert len(st) == 6 and all(math.isfinite(v) for v in st)

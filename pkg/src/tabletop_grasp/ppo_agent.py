"""Actor-critic PPO with a Gaussian action head.

Network layout: a shared ``6 -> 512`` tanh trunk feeds two 512-wide
streams.  The action stream ends in six outputs (three means, three raw
log-standard-deviations); the value stream ends in one scalar.  Means are
squashed to ``ACTION_SCALE * tanh(raw)`` so they stay inside the
environment's per-step motion limits.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nn_core
from .nn_core import AdamState, MlpParams

log = logging.getLogger(__name__)

STATE_DIM = 6
ACTION_DIM = 3
SIGMA_MIN = 1e-3
SIGMA_MAX = 1.0
# per-component bound on the action mean, matching the env's per-step limits
ACTION_SCALE = np.array([0.05, 0.05, 0.1])
LOG_2PI = math.log(2.0 * math.pi)
LOG_COLUMNS = ("episode", "total_reward", "steps", "success", "loss_v", "loss_a")


class NonFiniteState(ValueError):
    pass


class NonFiniteRatio(ArithmeticError):
    pass


class TrainingAborted(RuntimeError):
    """Raised when the loss turns non-finite; carries the last good state."""

    def __init__(self, message, params, log_rows, episode):
        super().__init__(message)
        self.params = params
        self.log_rows = log_rows
        self.episode = episode


@dataclass(frozen=True)
class EnvState:
    x: float
    y: float
    theta: float
    x_r: float
    y_r: float
    theta_r: float

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.x_r, self.y_r, self.theta_r])

    @classmethod
    def from_array(cls, a) -> "EnvState":
        return cls(*(float(v) for v in np.asarray(a, dtype=float).ravel()))


@dataclass
class ActionSample:
    action: np.ndarray
    log_prob: float
    mu: np.ndarray
    sigma: np.ndarray
    value: float = 0.0


@dataclass
class ActorCritic:
    trunk: MlpParams
    actor: MlpParams
    critic: MlpParams

    def networks(self) -> Dict[str, MlpParams]:
        return {"trunk": self.trunk, "actor": self.actor, "critic": self.critic}

    @classmethod
    def from_networks(cls, nets: Dict[str, MlpParams]) -> "ActorCritic":
        try:
            return cls(nets["trunk"], nets["actor"], nets["critic"])
        except KeyError as exc:
            raise nn_core.CheckpointError(f"checkpoint lacks network {exc}") from exc

    def architecture(self) -> dict:
        return {name: net.layer_sizes for name, net in self.networks().items()}


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lambda_gae: float = 0.95
    clip_epsilon: float = 0.2
    lr: float = 1e-5
    update_epochs: int = 10
    episodes: int = 200
    max_steps_per_episode: int = 100
    seed: int = 0
    episodes_per_batch: int = 1
    minibatch_size: int = 64
    normalize_advantages: bool = True
    plain_advantages: bool = False
    hidden: int = 512
    sigma_init: float = 0.05
    head_scale: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (0.0 < self.gamma < 1.0, "gamma must lie in (0, 1)"),
            (0.0 <= self.lambda_gae <= 1.0, "lambda_gae must lie in [0, 1]"),
            (0.0 < self.clip_epsilon < 1.0, "clip_epsilon must lie in (0, 1)"),
            (self.lr > 0.0, "lr must be positive"),
            (self.update_epochs >= 1, "update_epochs must be >= 1"),
            (self.episodes >= 0, "episodes must be >= 0"),
            (self.max_steps_per_episode >= 1, "max_steps_per_episode must be >= 1"),
            (self.episodes_per_batch >= 1, "episodes_per_batch must be >= 1"),
            (self.minibatch_size >= 1, "minibatch_size must be >= 1"),
            (self.hidden >= 1, "hidden must be >= 1"),
            (SIGMA_MIN <= self.sigma_init <= SIGMA_MAX, "sigma_init must lie in the sigma clamp range"),
            (self.head_scale > 0.0, "head_scale must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.plain_advantages else self.lambda_gae

    @property
    def effective_normalize(self) -> bool:
        return self.normalize_advantages and not self.plain_advantages


def init_actor_critic(seed: int, hidden: int = 512, sigma_init: float = 0.05,
                      head_scale: float = 0.01) -> ActorCritic:
    """Fresh actor-critic.

    The action head's weights are shrunk by ``head_scale`` and its
    log-sigma biases start at ``log(sigma_init)`` so that initial means sit
    near zero and exploration is on the scale of one control step.
    """
    ss = np.random.SeedSequence(seed)
    s_trunk, s_actor, s_critic = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    trunk = nn_core.init_params(s_trunk, [STATE_DIM, hidden], ["tanh"])
    actor = nn_core.init_params(s_actor, [hidden, hidden, 2 * ACTION_DIM], ["tanh", "identity"])
    critic = nn_core.init_params(s_critic, [hidden, hidden, 1], ["tanh", "identity"])
    head = actor.layers[-1]
    head.weights *= head_scale
    head.biases[ACTION_DIM:] = math.log(sigma_init)
    return ActorCritic(trunk, actor, critic)


def _state_array(state) -> np.ndarray:
    s = state.to_array() if isinstance(state, EnvState) else np.asarray(state, dtype=float)
    if s.shape[-1] != STATE_DIM:
        raise nn_core.ShapeError(f"state must have {STATE_DIM} components, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NonFiniteState(f"state contains non-finite values: {s}")
    return s


def _heads(raw: np.ndarray):
    mu = ACTION_SCALE * np.tanh(raw[..., :ACTION_DIM])
    log_sigma = raw[..., ACTION_DIM:]
    sigma = np.clip(np.exp(log_sigma), SIGMA_MIN, SIGMA_MAX)
    return mu, sigma


def policy_forward(params: ActorCritic, state, return_caches: bool = False):
    """Action mean, action std and state value for one state or a batch."""
    s = _state_array(state)
    h, c_trunk = nn_core.forward(params.trunk, s)
    raw, c_actor = nn_core.forward(params.actor, h)
    v, c_critic = nn_core.forward(params.critic, h)
    mu, sigma = _heads(raw)
    value = v[..., 0]
    if s.ndim == 1:
        value = float(value)
    if return_caches:
        return mu, sigma, value, (c_trunk, c_actor, c_critic, raw)
    return mu, sigma, value


def gaussian_log_prob(action, mu, sigma) -> np.ndarray:
    z = (np.asarray(action) - mu) / sigma
    return np.sum(-0.5 * z * z - np.log(sigma) - 0.5 * LOG_2PI, axis=-1)


def sample_action(mu, sigma, rng: np.random.Generator, value: float = 0.0) -> ActionSample:
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    z = rng.standard_normal(mu.shape)
    action = mu + sigma * z
    return ActionSample(action, float(gaussian_log_prob(action, mu, sigma)), mu, sigma, value)


def act_greedy(params: ActorCritic, state) -> np.ndarray:
    mu, _, _ = policy_forward(params, state)
    return mu


# -- advantage estimation ----------------------------------------------------

@dataclass
class Rollout:
    """Flat per-step arrays over one or more episodes.

    ``next_values[t]`` is the value estimate of the state reached after step
    ``t``; it is ignored where ``dones[t]`` is set.  ``ends`` marks the last
    step of every episode (terminal or truncated) and defaults to ``dones``.
    """

    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    next_values: Optional[np.ndarray] = None
    ends: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.dones = np.asarray(self.dones, dtype=bool)
        self.ends = self.dones.copy() if self.ends is None else np.asarray(self.ends, dtype=bool)
        if self.next_values is None:
            nv = np.zeros_like(self.values)
            nv[:-1] = self.values[1:]
            nv[self.ends] = 0.0
            self.next_values = nv
        self.next_values = np.asarray(self.next_values, dtype=float)

    def __len__(self):
        return len(self.rewards)

    def check(self) -> None:
        n = len(self.rewards)
        if n == 0:
            raise nn_core.ShapeError("rollout is empty")
        for name in ("states", "actions", "log_probs", "values", "dones", "next_values", "ends"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise nn_core.ShapeError(f"rollout field {name} has length {len(arr)}, expected {n}")


def compute_advantages(rollout: Rollout, gamma: float, lambda_gae: float) -> Tuple[np.ndarray, np.ndarray]:
    """GAE(lambda) advantages and value targets.

    With ``lambda_gae = 0`` every advantage is the one-step TD residual
    ``r_t + gamma * V(s_{t+1}) - V(s_t)`` (``V`` after a terminal step is 0).
    """
    rollout.check()
    r, v, nv = rollout.rewards, rollout.values, rollout.next_values
    not_done = ~rollout.dones
    cont = ~rollout.ends
    n = len(r)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        delta = r[t] + gamma * nv[t] * not_done[t] - v[t]
        if cont[t]:
            running = delta + gamma * lambda_gae * running
        else:
            running = delta
        adv[t] = running
    return adv, adv + v


# -- losses ------------------------------------------------------------------

@dataclass
class LossResult:
    loss_v: float
    loss_a: float
    loss: float
    grads: Optional[ActorCritic]
    ratios: np.ndarray
    dropped: int = 0


def surrogate(ratio, advantage, clip_epsilon: float) -> np.ndarray:
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return np.minimum(ratio * advantage, clipped * advantage)


def ppo_losses(batch: dict, params: ActorCritic, clip_epsilon: float, with_grads: bool = True) -> LossResult:
    """Value loss, clipped surrogate and their difference, with gradients.

    ``batch`` holds arrays ``states (B,6)``, ``actions (B,3)``,
    ``log_probs`` (behaviour policy), ``advantages`` and ``returns``.  Samples
    whose probability ratio is not finite are dropped and counted.
    """
    states = np.asarray(batch["states"], dtype=float)
    actions = np.asarray(batch["actions"], dtype=float)
    old_lp = np.asarray(batch["log_probs"], dtype=float)
    adv = np.asarray(batch["advantages"], dtype=float)
    ret = np.asarray(batch["returns"], dtype=float)

    mu, sigma, value, (c_trunk, c_actor, c_critic, raw) = policy_forward(params, states, return_caches=True)
    value = np.atleast_1d(value)
    new_lp = gaussian_log_prob(actions, mu, sigma)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(new_lp - old_lp)
    keep = np.isfinite(ratio)
    dropped = int((~keep).sum())
    n = int(keep.sum())
    if n == 0:
        raise NonFiniteRatio("every sample in the batch has a non-finite ratio")

    r_k, a_k = ratio[keep], adv[keep]
    clipped = np.clip(r_k, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    unclipped_obj = r_k * a_k
    loss_a = float(np.mean(np.minimum(unclipped_obj, clipped * a_k)))
    td = value[keep] - ret[keep]
    loss_v = float(np.mean(td * td))
    result = LossResult(loss_v, loss_a, loss_v - loss_a, None, ratio, dropped)
    if not with_grads:
        return result

    # dL/dV and dL/dlogp_new, zero for dropped samples
    g_value = np.zeros(len(ratio))
    g_value[keep] = 2.0 * td / n
    # gradient passes only where the unclipped term is the minimum
    active = unclipped_obj <= clipped * a_k
    g_lp = np.zeros(len(ratio))
    g_lp[keep] = np.where(active, -a_k * r_k / n, 0.0)

    diff = actions - mu
    inv_var = 1.0 / (sigma * sigma)
    g_mu = g_lp[:, None] * diff * inv_var
    g_mu_raw = g_mu * (ACTION_SCALE - mu * mu / ACTION_SCALE)
    g_sigma = g_lp[:, None] * (diff * diff * inv_var / sigma - 1.0 / sigma)
    log_sigma = raw[:, ACTION_DIM:]
    inside = (np.exp(log_sigma) > SIGMA_MIN) & (np.exp(log_sigma) < SIGMA_MAX)
    g_raw = np.concatenate([g_mu_raw, np.where(inside, g_sigma * sigma, 0.0)], axis=1)

    g_actor, g_h_actor = nn_core.backward(params.actor, c_actor, g_raw)
    g_critic, g_h_critic = nn_core.backward(params.critic, c_critic, g_value[:, None])
    g_trunk, _ = nn_core.backward(params.trunk, c_trunk, g_h_actor + g_h_critic)
    result.grads = ActorCritic(g_trunk, g_actor, g_critic)
    return result


# -- training ----------------------------------------------------------------

@dataclass
class TrainState:
    params: ActorCritic
    optim: Dict[str, AdamState]
    episodes_done: int = 0


def init_optim(params: ActorCritic) -> Dict[str, AdamState]:
    return {name: nn_core.init_adam(net) for name, net in params.networks().items()}


def apply_update(params: ActorCritic, optim: Dict[str, AdamState], grads: ActorCritic, lr: float):
    """Adam step on every sub-network; returns fresh params and optimizer state."""
    nets, g_nets = params.networks(), grads.networks()
    new_nets, new_optim = {}, {}
    for name in nets:
        new_nets[name], new_optim[name] = nn_core.adam_step(nets[name], optim[name], g_nets[name], lr)
    return ActorCritic.from_networks(new_nets), new_optim


def apply_update_(params: ActorCritic, optim: Dict[str, AdamState], grads: ActorCritic, lr: float) -> None:
    g_nets = grads.networks()
    for name, net in params.networks().items():
        nn_core.adam_update_(net, optim[name], g_nets[name], lr)


def collect_episode(env, params: ActorCritic, rng: np.random.Generator, seed: int, max_steps: int) -> dict:
    """Run one episode with the stochastic policy."""
    state = np.asarray(env.reset(seed=seed), dtype=float)
    states, actions, log_probs, rewards, values, dones = [], [], [], [], [], []
    success = False
    result = None
    for _ in range(max_steps):
        mu, sigma, value = policy_forward(params, state)
        s = sample_action(mu, sigma, rng, value)
        result = env.step(s.action)
        states.append(state)
        actions.append(s.action)
        log_probs.append(s.log_prob)
        rewards.append(result.reward)
        values.append(value)
        terminal = result.done and not result.info.get("truncated", False)
        dones.append(terminal)
        success = success or result.info.get("event") == "grasp_success"
        state = np.asarray(result.state, dtype=float)
        if result.done:
            break
    n = len(rewards)
    next_values = np.zeros(n)
    next_values[:-1] = values[1:]
    if not dones[-1]:
        # truncated: bootstrap from the state the episode stopped in
        next_values[-1] = policy_forward(params, state)[2]
    ends = np.zeros(n, dtype=bool)
    ends[-1] = True
    return {
        "states": np.array(states), "actions": np.array(actions), "log_probs": np.array(log_probs),
        "rewards": np.array(rewards), "values": np.array(values), "dones": np.array(dones),
        "next_values": next_values, "ends": ends, "success": success,
    }


def _concat_episodes(eps: Sequence[dict]) -> Rollout:
    cat = {k: np.concatenate([e[k] for e in eps]) for k in
           ("states", "actions", "log_probs", "rewards", "values", "dones", "next_values", "ends")}
    return Rollout(**cat)


def format_log_row(row: dict) -> List[str]:
    out = []
    for col in LOG_COLUMNS:
        v = row[col]
        out.append(repr(float(v)) if isinstance(v, float) else str(int(v)))
    return out


def write_log_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow(format_log_row(row))


def train(env, config: PpoConfig, log_path=None, checkpoint_dir=None, checkpoint_every: int = 0,
          init: Optional[ActorCritic] = None,
          on_batch: Optional[Callable[[int, ActorCritic], None]] = None) -> Tuple[ActorCritic, List[dict]]:
    """Train an actor-critic on ``env`` with PPO.

    The env must provide ``reset(seed=...) -> state`` and
    ``step(action) -> result`` where ``result`` has ``state``, ``reward``,
    ``done`` and an ``info`` dict with ``event`` and ``truncated`` keys.

    Returns the final parameters and one log row per episode.  When
    ``log_path`` is given the rows are also streamed to a CSV file.
    """
    config.validate()
    if init is not None:
        params = ActorCritic.from_networks({k: v.copy() for k, v in init.networks().items()})
    else:
        params = init_actor_critic(config.seed, config.hidden, config.sigma_init, config.head_scale)
    optim = init_optim(params)
    rng = np.random.default_rng(config.seed)
    lam = config.effective_lambda
    rows: List[dict] = []
    fh = writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        fh.flush()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    good = params
    try:
        episode = 0
        while episode < config.episodes:
            n_batch = min(config.episodes_per_batch, config.episodes - episode)
            eps = []
            for _ in range(n_batch):
                ep_seed = int(rng.integers(2 ** 31))
                eps.append(collect_episode(env, params, rng, ep_seed, config.max_steps_per_episode))
            rollout = _concat_episodes(eps)
            adv, ret = compute_advantages(rollout, config.gamma, lam)
            if config.effective_normalize and len(adv) > 1:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            batch = {"states": rollout.states, "actions": rollout.actions, "log_probs": rollout.log_probs,
                     "advantages": adv, "returns": ret}
            good = ActorCritic.from_networks({k: v.copy() for k, v in params.networks().items()})
            loss_v = loss_a = 0.0
            for _ in range(config.update_epochs):
                order = rng.permutation(len(adv))
                lv, la = [], []
                for start in range(0, len(order), config.minibatch_size):
                    idx = order[start:start + config.minibatch_size]
                    mb = {k: v[idx] for k, v in batch.items()}
                    res = ppo_losses(mb, params, config.clip_epsilon)
                    if not math.isfinite(res.loss):
                        raise TrainingAborted(f"non-finite loss at episode {episode}", good, rows, episode)
                    apply_update_(params, optim, res.grads, config.lr)
                    lv.append(res.loss_v)
                    la.append(res.loss_a)
                loss_v, loss_a = float(np.mean(lv)), float(np.mean(la))
            for e in eps:
                episode += 1
                row = {"episode": episode, "total_reward": float(e["rewards"].sum()),
                       "steps": len(e["rewards"]), "success": int(e["success"]),
                       "loss_v": loss_v, "loss_a": loss_a}
                rows.append(row)
                if writer is not None:
                    writer.writerow(format_log_row(row))
            if fh is not None:
                fh.flush()
            if on_batch is not None:
                on_batch(episode, params)
            if ckpt_dir is not None and checkpoint_every and episode % checkpoint_every < n_batch:
                save_agent(ckpt_dir / f"checkpoint_{episode:06d}.json", params, optim, episode, config)
    except nn_core.NonFiniteGradient as exc:
        raise TrainingAborted(str(exc), good, rows, episode) from exc
    finally:
        if fh is not None:
            fh.close()
    return params, rows


def save_agent(path, params: ActorCritic, optim: Optional[Dict[str, AdamState]] = None,
               episodes: int = 0, config: Optional[PpoConfig] = None) -> None:
    meta = {"kind": "actor_critic"}
    if config is not None:
        meta["ppo"] = asdict(config)
    nn_core.save_checkpoint(path, params.networks(), optim, episodes, meta)


def load_agent(path) -> Tuple[ActorCritic, nn_core.Checkpoint]:
    ckpt = nn_core.load_checkpoint(path)
    params = ActorCritic.from_networks(ckpt.networks)
    arch = params.architecture()
    h = arch["trunk"][-1]
    if arch["trunk"][0] != STATE_DIM or arch["actor"] != [h, h, 2 * ACTION_DIM] or arch["critic"] != [h, h, 1]:
        raise nn_core.CheckpointError(f"checkpoint architecture {arch} is not an actor-critic")
    return params, ckpt

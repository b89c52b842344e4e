"""Multi-agent PPO with a shared Gaussian policy and a centralised critic.

All agents share one policy network (each feeds its own observation); the
value function sees the concatenated observations of every agent. Value
targets are normalised with PopArt, advantages come from GAE on the team
reward (the mean of the agents' shaped rewards).

Actions are sampled in normalised units: the environment receives
``max_speed * clip(z, -1, 1)`` while log-probabilities use the raw ``z``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import neural
from .env import COMPONENTS, CoalitionEnv, team_components
from .neural import AdamState, MlpParams

LOG_2PI = math.log(2.0 * math.pi)
VAR_FLOOR = 1e-8


# -- returns and advantages -------------------------------------------------------

def _check_lengths(*seqs):
    n = len(seqs[0])
    if any(len(s) != n for s in seqs):
        raise ValueError("rewards, values and dones must have equal length")


def gae(rewards, values, bootstrap_value: float, dones, gamma: float, lam: float) -> np.ndarray:
    """Generalised advantage estimates by the backward recursion."""
    _check_lengths(rewards, values, dones)
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(r)
    running = 0.0
    next_v = float(bootstrap_value)
    for t in range(len(r) - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * live * next_v - v[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_v = v[t]
    return adv


def reward_to_go(rewards, bootstrap_value: float, dones, gamma: float) -> np.ndarray:
    _check_lengths(rewards, dones)
    r = np.asarray(rewards, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    out = np.zeros_like(r)
    nxt = float(bootstrap_value)
    for t in range(len(r) - 1, -1, -1):
        nxt = r[t] + gamma * (1.0 - d[t]) * nxt
        out[t] = nxt
    return out


def clipped_objective(log_ratio, advantage, epsilon: float):
    """Pessimistic PPO surrogate ``min(rho*A, clip(rho, 1-eps, 1+eps)*A)``."""
    rho = np.exp(log_ratio)
    return np.minimum(rho * advantage, np.clip(rho, 1.0 - epsilon, 1.0 + epsilon) * advantage)


def clipped_objective_grad(log_ratio, advantage, epsilon: float):
    """Derivative of :func:`clipped_objective` w.r.t. ``log_ratio``.

    Zero wherever the clipped branch is strictly smaller (the clamp binds).
    """
    rho = np.exp(log_ratio)
    unclipped = rho * advantage
    clipped = np.clip(rho, 1.0 - epsilon, 1.0 + epsilon) * advantage
    return np.where(unclipped <= clipped, unclipped, 0.0)


# -- PopArt ----------------------------------------------------------------------

@dataclass
class PopArtState:
    """Debiased exponential moving moments of the return targets."""

    beta: float = 0.99
    enabled: bool = True
    first: float = 0.0
    second: float = 0.0
    weight: float = 0.0

    @property
    def mean(self) -> float:
        return self.first / self.weight if self.weight > 0 else 0.0

    @property
    def var(self) -> float:
        if self.weight <= 0:
            return 1.0
        return max(self.second / self.weight - self.mean ** 2, VAR_FLOOR)

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    def normalize(self, x):
        if not self.enabled:
            return np.asarray(x, dtype=np.float64)
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, x):
        if not self.enabled:
            return np.asarray(x, dtype=np.float64)
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


def popart_update_and_normalize(state: PopArtState, targets) -> np.ndarray:
    """Fold a batch into the running moments, then normalise it (identity if disabled)."""
    x = np.asarray(targets, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("targets must be finite")
    if not state.enabled:
        return x.copy()
    b = state.beta
    state.first = b * state.first + (1.0 - b) * float(np.mean(x))
    state.second = b * state.second + (1.0 - b) * float(np.mean(x * x))
    state.weight = b * state.weight + (1.0 - b)
    return state.normalize(x)


def popart_preserve(value: MlpParams, old_mean: float, old_std: float,
                    new_mean: float, new_std: float) -> MlpParams:
    """Rescale the output layer so denormalised predictions are unchanged."""
    w = [a.copy() for a in value.weights]
    b = [a.copy() for a in value.biases]
    w[-1] *= old_std / new_std
    b[-1] = (old_std * b[-1] + old_mean - new_mean) / new_std
    return MlpParams(w, b, value.activations, value.output_gain)


# -- Gaussian policy head ------------------------------------------------------------

@dataclass
class GaussianPolicy:
    net: MlpParams
    log_std: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return self.net.arrays() + [self.log_std]

    def with_arrays(self, arrays: list[np.ndarray]) -> "GaussianPolicy":
        return GaussianPolicy(self.net.with_arrays(arrays[:-1]), arrays[-1].copy())


def gaussian_log_prob(z, mean, log_std) -> np.ndarray:
    """Log density of a diagonal Gaussian, summed over the last axis."""
    z, mean, log_std = np.asarray(z), np.asarray(mean), np.asarray(log_std)
    u = (z - mean) * np.exp(-log_std)
    return np.sum(-0.5 * u * u - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(np.asarray(log_std) + 0.5 * (LOG_2PI + 1.0)))


def sample_action(policy: GaussianPolicy, obs, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    mean = neural.forward(policy.net, obs)
    z = mean + np.exp(policy.log_std) * rng.standard_normal(mean.shape)
    return z, float(gaussian_log_prob(z, mean, policy.log_std))


def mean_action(policy: GaussianPolicy, obs, max_speed: float = 1.0) -> np.ndarray:
    return max_speed * np.clip(neural.forward(policy.net, obs), -1.0, 1.0)


# -- configuration and buffer -------------------------------------------------------------

@dataclass
class MappoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs_per_batch: int = 10
    minibatch_count: int = 1
    buffer_length: int = 25
    value_loss_coeff: float = 1.0
    entropy_coeff: float = 0.01
    popart_enabled: bool = True
    popart_beta: float = 0.99
    chunk_length: int | None = None
    lr: float = 7e-4
    grad_clip: float | None = 10.0
    hidden: tuple[int, ...] = (64, 64)
    output_gain: float = 0.01
    log_std_init: float = 0.0
    episodes: int = 5000
    standardize_advantages: bool = True

    def __post_init__(self):
        if not 0 < self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in (0, 1]")
        if not self.clip_epsilon > 0:
            raise ValueError("clip_epsilon must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.epochs_per_batch < 1 or self.minibatch_count < 1 or self.buffer_length < 1:
            raise ValueError("epochs, minibatch count and buffer length must be >= 1")


@dataclass
class RolloutBuffer:
    """Flat per-(step, agent) rows of one batch of episodes."""

    states: list[np.ndarray] = field(default_factory=list)
    obs: list[np.ndarray] = field(default_factory=list)
    actions: list[np.ndarray] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.obs)

    def add(self, state, obs, action, log_prob, reward, value, done) -> None:
        self.states.append(np.asarray(state, dtype=np.float64))
        self.obs.append(np.asarray(obs, dtype=np.float64))
        self.actions.append(np.asarray(action, dtype=np.float64))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))
        self.advantages = self.returns = None

    def finalize(self, advantages, returns) -> None:
        if len(advantages) != len(self) or len(returns) != len(self):
            raise ValueError("advantage/return columns must match the buffer length")
        self.advantages = np.asarray(advantages, dtype=np.float64)
        self.returns = np.asarray(returns, dtype=np.float64)

    def arrays(self) -> dict[str, np.ndarray]:
        if self.advantages is None:
            raise RuntimeError("buffer not finalized")
        return {"states": np.array(self.states), "obs": np.array(self.obs),
                "actions": np.array(self.actions), "log_probs": np.array(self.log_probs),
                "advantages": self.advantages, "returns": self.returns}


# -- losses -------------------------------------------------------------------------

def policy_loss_and_grad(policy: GaussianPolicy, obs, actions, old_log_probs, advantages,
                         epsilon: float, entropy_coeff: float) -> tuple[float, list[np.ndarray]]:
    """Loss ``-(mean clipped surrogate) - entropy_coeff * entropy`` and its gradient."""
    mean, cache = neural.forward_trace(policy.net, obs)
    logp = gaussian_log_prob(actions, mean, policy.log_std)
    log_ratio = logp - old_log_probs
    n = len(logp)
    surrogate = float(np.mean(clipped_objective(log_ratio, advantages, epsilon)))
    loss = -surrogate - entropy_coeff * gaussian_entropy(policy.log_std)
    dl_dlogp = -clipped_objective_grad(log_ratio, advantages, epsilon) / n
    inv_var = np.exp(-2.0 * policy.log_std)
    diff = actions - mean
    d_mean = dl_dlogp[:, None] * diff * inv_var
    d_log_std = np.sum(dl_dlogp[:, None] * (diff * diff * inv_var - 1.0), axis=0) - entropy_coeff
    grads, _ = neural.backward_from_trace(policy.net, cache, d_mean)
    return loss, grads.arrays() + [d_log_std]


def value_loss_and_grad(value: MlpParams, states, targets, coeff: float = 1.0) -> tuple[float, MlpParams]:
    """``coeff * mean((V(s) - target)^2)`` and its gradient."""
    v, cache = neural.forward_trace(value, states)
    err = v[:, 0] - targets
    loss = coeff * float(np.mean(err * err))
    grads, _ = neural.backward_from_trace(value, cache, (2.0 * coeff / len(err)) * err[:, None])
    return loss, grads


def _clip_arrays(arrays: list[np.ndarray], max_norm: float | None) -> list[np.ndarray]:
    if max_norm is None:
        return arrays
    norm = math.sqrt(sum(float(np.sum(a * a)) for a in arrays))
    if norm <= max_norm or norm == 0.0:
        return arrays
    return [a * (max_norm / norm) for a in arrays]


# -- training ------------------------------------------------------------------------

@dataclass
class MappoModels:
    policy: GaussianPolicy
    value: MlpParams
    popart: PopArtState
    policy_opt: AdamState
    value_opt: AdamState


@dataclass
class MappoResult:
    models: MappoModels
    curve: list[dict] = field(default_factory=list)

    @property
    def policy(self) -> GaussianPolicy:
        return self.models.policy

    def returns(self) -> np.ndarray:
        return np.array([row["return"] for row in self.curve])


def init_models(obs_dim: int, n_agents: int, config: MappoConfig, rng: np.random.Generator) -> MappoModels:
    net = neural.init_mlp([obs_dim, *config.hidden, 2], "tanh", "identity", rng, config.output_gain)
    policy = GaussianPolicy(net, np.full(2, config.log_std_init))
    value = neural.init_mlp([obs_dim * n_agents, *config.hidden, 1], "tanh", "identity", rng)
    return MappoModels(policy, value, PopArtState(config.popart_beta, config.popart_enabled),
                       neural.adam_init(policy.arrays(), config.lr), neural.adam_init(value, config.lr))


def _value_of(models: MappoModels, state) -> float:
    return float(models.popart.denormalize(neural.forward(models.value, state)[0]))


def collect_episode(env: CoalitionEnv, models: MappoModels, rng: np.random.Generator,
                    buffer: RolloutBuffer) -> dict:
    """Roll out one stochastic episode into ``buffer``; returns its curve row."""
    max_speed = env.config.max_speed
    obs = env.reset(rng)
    n = env.n_agents
    team_r, team_v, team_d = [], [], []
    rows = []
    comps = dict.fromkeys(COMPONENTS, 0.0)
    res = None
    for _ in range(env.config.max_steps):
        state = np.concatenate(obs)
        v = _value_of(models, state)
        sampled = [sample_action(models.policy, o, rng) for o in obs]
        actions = np.array([max_speed * np.clip(z, -1.0, 1.0) for z, _ in sampled])
        res = env.step(actions)
        r = float(np.mean(res.rewards))
        for k, c in team_components(res.breakdowns).items():
            comps[k] += c
        rows.append((state, obs, sampled))
        team_r.append(r)
        team_v.append(v)
        team_d.append(res.terminal)
        obs = res.observations
        if res.done:
            break
    bootstrap = 0.0 if res.terminal else _value_of(models, np.concatenate(obs))
    for (state, ob, sampled), r, v, d in zip(rows, team_r, team_v, team_d):
        for i in range(n):
            buffer.add(state, ob[i], sampled[i][0], sampled[i][1], r, v, d)
    record = env.log.to_record()
    row = {"return": float(sum(team_r))}
    row.update(comps)
    row.update({"collisions": record.alpha + record.beta, "steps": len(team_r),
                "completed": int(bool(res.terminal))})
    row["_segment"] = (np.array(team_r), np.array(team_v), np.array(team_d, dtype=float), bootstrap, n)
    return row


def update(models: MappoModels, buffer: RolloutBuffer, config: MappoConfig,
           rng: np.random.Generator) -> dict:
    """K epochs of minibatch Adam steps on the clipped surrogate and value loss."""
    data = buffer.arrays()
    adv = data["advantages"]
    if config.standardize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    old_mean, old_std = models.popart.mean, models.popart.std
    targets = popart_update_and_normalize(models.popart, data["returns"])
    if config.popart_enabled and models.popart.weight > 0:
        models.value = popart_preserve(models.value, old_mean if old_std else 0.0, old_std,
                                       models.popart.mean, models.popart.std)
    n = len(adv)
    stats = {}
    for _ in range(config.epochs_per_batch):
        order = rng.permutation(n)
        for chunk in np.array_split(order, config.minibatch_count):
            if len(chunk) == 0:
                continue
            p_loss, p_grads = policy_loss_and_grad(
                models.policy, data["obs"][chunk], data["actions"][chunk], data["log_probs"][chunk],
                adv[chunk], config.clip_epsilon, config.entropy_coeff)
            arrays, models.policy_opt = neural.adam_step(
                models.policy.arrays(), _clip_arrays(p_grads, config.grad_clip), models.policy_opt)
            models.policy = models.policy.with_arrays(arrays)
            v_loss, v_grads = value_loss_and_grad(models.value, data["states"][chunk], targets[chunk],
                                                  config.value_loss_coeff)
            models.value, models.value_opt = neural.adam_step(
                models.value, neural.clip_by_global_norm(v_grads, config.grad_clip), models.value_opt)
            stats = {"policy_loss": p_loss, "value_loss": v_loss}
    return stats


def train(env_factory: Callable[[], CoalitionEnv], config: MappoConfig, seed: int,
          save_dir: Path | None = None, save_interval: int = 0,
          progress: Callable[[int, dict], None] | None = None) -> MappoResult:
    """Collect ``buffer_length`` episodes, update, repeat until ``episodes`` are used."""
    env = env_factory()
    init_ss, env_ss, upd_ss = np.random.SeedSequence(seed).spawn(3)
    env_rng = np.random.default_rng(env_ss)
    upd_rng = np.random.default_rng(upd_ss)
    models = init_models(env.obs_dim, env.n_agents, config, np.random.default_rng(init_ss))
    result = MappoResult(models)
    episode = 0
    while episode < config.episodes:
        buffer = RolloutBuffer()
        advs, rets = [], []
        for _ in range(min(config.buffer_length, config.episodes - episode)):
            row = collect_episode(env, models, env_rng, buffer)
            r, v, d, boot, n = row.pop("_segment")
            a = gae(r, v, boot, d, config.gamma, config.gae_lambda)
            g = reward_to_go(r, boot, d, config.gamma)
            advs.append(np.repeat(a, n))
            rets.append(np.repeat(g, n))
            row = {"episode": episode, **row}
            result.curve.append(row)
            if progress is not None:
                progress(episode, row)
            episode += 1
            if save_dir is not None and save_interval and episode % save_interval == 0:
                save_models(models, Path(save_dir) / f"episode_{episode}", seed)
        buffer.finalize(np.concatenate(advs), np.concatenate(rets))
        update(models, buffer, config, upd_rng)
    return result


def greedy_rollouts(env: CoalitionEnv, policy: GaussianPolicy, episodes: int,
                    rng: np.random.Generator) -> list[dict]:
    from .maddpg import run_episode
    ms = env.config.max_speed
    return [run_episode(env, lambda i, o: mean_action(policy, o, ms), rng) for _ in range(episodes)]


# -- persistence ------------------------------------------------------------------------

def save_models(models: MappoModels, directory: Path, seed: int | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    neural.save(models.policy.net, directory / "policy.ckpt", seed)
    neural.save(models.value, directory / "value.ckpt", seed)
    extra = {"log_std": [repr(float(x)) for x in models.policy.log_std],
             "popart": {"mean": repr(models.popart.mean), "std": repr(models.popart.std)}}
    tmp = directory / "policy_head.json.tmp"
    tmp.write_text(json.dumps(extra, indent=2, sort_keys=True) + "\n")
    tmp.replace(directory / "policy_head.json")


def load_policy(directory: Path) -> GaussianPolicy:
    directory = Path(directory)
    net = neural.load(directory / "policy.ckpt")
    head = json.loads((directory / "policy_head.json").read_text())
    return GaussianPolicy(net, np.array([float(x) for x in head["log_std"]]))

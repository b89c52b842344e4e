"""Multi-agent DDPG with centralised critics and decentralised actors.

Each agent owns an actor ``obs_i -> action_i`` and a critic that scores the
joint observation plus the joint action. Actors end in ``tanh`` and are
scaled by the world's ``max_speed``; the critic sees actions divided by
``max_speed`` so its inputs stay O(1).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import neural
from .env import COMPONENTS, CoalitionEnv, team_components
from .neural import AdamState, MlpParams

log = logging.getLogger(__name__)


@dataclass
class Transition:
    x: list[np.ndarray]
    actions: np.ndarray
    rewards: np.ndarray
    x_next: list[np.ndarray]
    done: bool


@dataclass
class Batch:
    obs: list[np.ndarray]
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: list[np.ndarray]
    done: np.ndarray

    def __len__(self) -> int:
        return len(self.done)


class ReplayBuffer:
    """Ring buffer of joint transitions; storage grows on demand up to ``capacity``."""

    def __init__(self, capacity: int, obs_dims: Sequence[int]):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs_dims = list(obs_dims)
        self.n_agents = len(obs_dims)
        self._size = 0
        self._cursor = 0
        self._alloc = 0
        self._obs = [np.zeros((0, d)) for d in obs_dims]
        self._next = [np.zeros((0, d)) for d in obs_dims]
        self._act = np.zeros((0, self.n_agents, 2))
        self._rew = np.zeros((0, self.n_agents))
        self._done = np.zeros(0)

    def __len__(self) -> int:
        return self._size

    def _grow(self):
        new = min(self.capacity, max(1024, 2 * self._alloc))
        pad = lambda a: np.concatenate([a, np.zeros((new - self._alloc,) + a.shape[1:])])
        self._obs = [pad(a) for a in self._obs]
        self._next = [pad(a) for a in self._next]
        self._act, self._rew, self._done = pad(self._act), pad(self._rew), pad(self._done)
        self._alloc = new

    def add(self, tr: Transition) -> None:
        if len(tr.x) != self.n_agents or len(tr.x_next) != self.n_agents:
            raise ValueError("transition arity does not match the buffer")
        if self._cursor >= self._alloc:
            self._grow()
        k = self._cursor
        for i in range(self.n_agents):
            self._obs[i][k] = tr.x[i]
            self._next[i][k] = tr.x_next[i]
        self._act[k] = tr.actions
        self._rew[k] = tr.rewards
        self._done[k] = float(tr.done)
        self._cursor = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} from {self._size} transitions")
        return rng.choice(self._size, size=batch_size, replace=False)

    def batch(self, idx: np.ndarray) -> Batch:
        return Batch([o[idx] for o in self._obs], self._act[idx], self._rew[idx],
                     [o[idx] for o in self._next], self._done[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        return self.batch(self.sample_indices(batch_size, rng))


@dataclass
class MaddpgConfig:
    actor_lr: float = 0.01
    critic_lr: float = 0.01
    gamma: float = 0.99
    tau: float = 0.01
    batch_size: int = 1024
    buffer_capacity: int = 1_000_000
    noise_sigma_start: float = 0.3
    noise_sigma_end: float = 0.05
    noise_decay_episodes: int | None = None
    episodes: int = 5000
    steps_per_episode: int | None = None
    update_every: int = 25
    warmup: int | None = None
    hidden: tuple[int, ...] = (64, 64)
    output_gain: float = 0.01
    grad_clip: float | None = None

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size cannot exceed buffer_capacity")

    @property
    def warmup_steps(self) -> int:
        return self.batch_size if self.warmup is None else self.warmup

    def noise_sigma(self, episode: int) -> float:
        span = self.noise_decay_episodes if self.noise_decay_episodes is not None else self.episodes // 2
        if span <= 0:
            return self.noise_sigma_end
        frac = min(episode / span, 1.0)
        return self.noise_sigma_start + frac * (self.noise_sigma_end - self.noise_sigma_start)


@dataclass
class AgentNets:
    actor: MlpParams
    critic: MlpParams
    target_actor: MlpParams
    target_critic: MlpParams
    actor_opt: AdamState
    critic_opt: AdamState


def init_agents(obs_dims: Sequence[int], config: MaddpgConfig, rng: np.random.Generator) -> list[AgentNets]:
    critic_in = sum(obs_dims) + 2 * len(obs_dims)
    nets = []
    for d in obs_dims:
        actor = neural.init_mlp([d, *config.hidden, 2], "relu", "tanh", rng, config.output_gain)
        critic = neural.init_mlp([critic_in, *config.hidden, 1], "relu", "identity", rng)
        nets.append(AgentNets(actor, critic, actor.copy(), critic.copy(),
                              neural.adam_init(actor, config.actor_lr),
                              neural.adam_init(critic, config.critic_lr)))
    return nets


def select_action(actor: MlpParams, obs, noise_sigma: float, rng: np.random.Generator | None,
                  max_speed: float = 1.0) -> np.ndarray:
    """Actor output plus Gaussian exploration noise, clipped to the action box.

    ``noise_sigma`` is expressed as a fraction of ``max_speed``.
    """
    a = neural.forward(actor, obs)
    if noise_sigma > 0:
        a = a + noise_sigma * rng.standard_normal(a.shape)
    return max_speed * np.clip(a, -1.0, 1.0)


def critic_target(r, done, gamma: float, q_next):
    """Bootstrapped TD target ``r + gamma * q_next`` (no bootstrap when done)."""
    return r + gamma * (1.0 - np.asarray(done, dtype=np.float64)) * q_next


def _critic_input(obs: Sequence[np.ndarray], actions: np.ndarray, max_speed: float) -> np.ndarray:
    flat_a = actions.reshape(len(actions), -1) / max_speed
    return np.concatenate(list(obs) + [flat_a], axis=1)


def critic_update(agent: int, batch: Batch, nets: list[AgentNets], config: MaddpgConfig,
                  max_speed: float = 1.0) -> float:
    """One Adam step on agent ``agent``'s critic; returns the pre-step MSE."""
    me = nets[agent]
    next_actions = np.stack([max_speed * neural.forward(n.target_actor, o)
                             for n, o in zip(nets, batch.next_obs)], axis=1)
    q_next = neural.forward(me.target_critic, _critic_input(batch.next_obs, next_actions, max_speed))[:, 0]
    y = critic_target(batch.rewards[:, agent], batch.done, config.gamma, q_next)
    q, cache = neural.forward_trace(me.critic, _critic_input(batch.obs, batch.actions, max_speed))
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    grads, _ = neural.backward_from_trace(me.critic, cache, (2.0 / len(err)) * err[:, None])
    grads = neural.clip_by_global_norm(grads, config.grad_clip)
    me.critic, me.critic_opt = neural.adam_step(me.critic, grads, me.critic_opt)
    return loss


def actor_objective_and_grad(agent: int, batch: Batch, nets: list[AgentNets],
                             max_speed: float = 1.0) -> tuple[float, MlpParams]:
    """Mean Q with this agent's batch action replaced by its current policy.

    Returns the objective and its gradient w.r.t. the actor parameters.
    """
    me = nets[agent]
    mu, a_cache = neural.forward_trace(me.actor, batch.obs[agent])
    actions = batch.actions.copy()
    actions[:, agent] = max_speed * mu
    q, c_cache = neural.forward_trace(me.critic, _critic_input(batch.obs, actions, max_speed))
    n = len(q)
    _, dx = neural.backward_from_trace(me.critic, c_cache, np.full((n, 1), 1.0 / n))
    col = sum(batch.obs[j].shape[1] for j in range(len(batch.obs))) + 2 * agent
    grads, _ = neural.backward_from_trace(me.actor, a_cache, dx[:, col:col + 2])
    return float(np.mean(q)), grads


def policy_gradient_step(actor: MlpParams, opt: AdamState, grads: MlpParams,
                         grad_clip: float | None = None) -> tuple[MlpParams, AdamState]:
    """Ascent step: Adam descends on the negated objective gradient."""
    neg = grads.with_arrays([-g for g in grads.arrays()])
    return neural.adam_step(actor, neural.clip_by_global_norm(neg, grad_clip), opt)


def actor_update(agent: int, batch: Batch, nets: list[AgentNets], config: MaddpgConfig,
                 max_speed: float = 1.0) -> float:
    objective, grads = actor_objective_and_grad(agent, batch, nets, max_speed)
    me = nets[agent]
    me.actor, me.actor_opt = policy_gradient_step(me.actor, me.actor_opt, grads, config.grad_clip)
    return objective


def soft_update_targets(nets: list[AgentNets], tau: float) -> None:
    for n in nets:
        n.target_actor = neural.soft_update(n.target_actor, n.actor, tau)
        n.target_critic = neural.soft_update(n.target_critic, n.critic, tau)


@dataclass
class TrainResult:
    nets: list[AgentNets]
    curve: list[dict] = field(default_factory=list)

    @property
    def actors(self) -> list[MlpParams]:
        return [n.actor for n in self.nets]

    def returns(self) -> np.ndarray:
        return np.array([row["return"] for row in self.curve])


def run_episode(env: CoalitionEnv, act: Callable[[int, np.ndarray], np.ndarray],
                rng: np.random.Generator, steps: int | None = None,
                on_step: Callable | None = None) -> dict:
    """Roll out one episode; returns the learning-curve row for it.

    The episode return is the sum over steps of the mean agent reward.
    """
    obs = env.reset(rng)
    limit = steps or env.config.max_steps
    ret = 0.0
    comps = dict.fromkeys(COMPONENTS, 0.0)
    t = 0
    res = None
    for t in range(1, limit + 1):
        actions = np.array([act(i, o) for i, o in enumerate(obs)])
        res = env.step(actions)
        if on_step is not None:
            on_step(obs, actions, res)
        ret += float(np.mean(res.rewards))
        for k, v in team_components(res.breakdowns).items():
            comps[k] += v
        obs = res.observations
        if res.done:
            break
    record = env.log.to_record()
    row = {"return": ret}
    row.update(comps)
    row.update({"collisions": record.alpha + record.beta, "steps": t,
                "completed": int(bool(res is not None and res.terminal))})
    return row


def train(env_factory: Callable[[], CoalitionEnv], config: MaddpgConfig, seed: int,
          save_dir: Path | None = None, save_interval: int = 0,
          progress: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Full MADDPG loop: act with noise, store, update every ``update_every`` steps."""
    env = env_factory()
    max_speed = env.config.max_speed
    init_ss, env_ss, noise_ss, sample_ss = np.random.SeedSequence(seed).spawn(4)
    env_rng = np.random.default_rng(env_ss)
    noise_rng = np.random.default_rng(noise_ss)
    sample_rng = np.random.default_rng(sample_ss)
    obs_dims = [env.obs_dim] * env.n_agents
    nets = init_agents(obs_dims, config, np.random.default_rng(init_ss))
    buffer = ReplayBuffer(config.buffer_capacity, obs_dims)
    result = TrainResult(nets)
    total_steps = 0

    for episode in range(config.episodes):
        sigma = config.noise_sigma(episode)

        def act(i, o):
            return select_action(nets[i].actor, o, sigma, noise_rng, max_speed)

        def on_step(obs, actions, res):
            nonlocal total_steps
            buffer.add(Transition(obs, actions, res.rewards, res.observations, res.terminal))
            total_steps += 1
            if len(buffer) >= config.warmup_steps and total_steps % config.update_every == 0:
                for i in range(len(nets)):
                    batch = buffer.sample(config.batch_size, sample_rng)
                    critic_update(i, batch, nets, config, max_speed)
                    actor_update(i, batch, nets, config, max_speed)
                soft_update_targets(nets, config.tau)

        row = run_episode(env, act, env_rng, config.steps_per_episode, on_step)
        row = {"episode": episode, **row}
        result.curve.append(row)
        if progress is not None:
            progress(episode, row)
        if save_dir is not None and save_interval and (episode + 1) % save_interval == 0:
            save_agents(nets, Path(save_dir) / f"episode_{episode + 1}", seed)
    return result


def save_agents(nets: Sequence[AgentNets], directory: Path, seed: int | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, n in enumerate(nets):
        neural.save(n.actor, directory / f"actor_{i}.ckpt", seed)
        neural.save(n.critic, directory / f"critic_{i}.ckpt", seed)


def greedy_rollouts(env: CoalitionEnv, actors: Sequence[MlpParams], episodes: int,
                    rng: np.random.Generator) -> tuple[list[dict], list[np.ndarray]]:
    """Noise-free rollouts; returns curve rows and the UGV position tracks."""
    max_speed = env.config.max_speed
    rows, tracks = [], []
    for _ in range(episodes):
        row = run_episode(env, lambda i, o: select_action(actors[i % len(actors)], o, 0.0, None, max_speed), rng)
        rows.append(row)
        tracks.append(np.array([s.ugv_pos for s in env.log.states]))
    return rows, tracks

"""Actor-critic agents and MADDPG-style updates.

Centralized training / decentralized execution: critics may condition on
the joint observations and actions of all agents, while action selection
only ever reads the acting agent's own observation. Mode switches cover
the baseline variants (independent critics, one fully centralized brain).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import env as env_mod
from . import nets
from .defense import perturb_observation
from .env import RewardWeights, WorldState, compute_reward, observe
from .nets import Mlp, OptState, apply_update, backward, flatten, forward, unflatten


class Mode(enum.Enum):
    MADDPG = "MADDPG"
    INDEPENDENT = "INDEPENDENT"
    CENTRALIZED = "CENTRALIZED"
    FED_NO_MARL = "FED_NO_MARL"


#: Modes whose critics condition on the joint (all-agent) state/action.
JOINT_CRITIC_MODES = (Mode.MADDPG, Mode.CENTRALIZED)


@dataclass(frozen=True)
class Hyperparams:
    discount: float = 0.95
    soft_tau: float = 0.01
    batch_size: int = 64
    noise_sigma: float = 0.3
    mode: Mode = Mode.MADDPG
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    update_every: int = 2  # env steps between update passes

    def validate(self) -> None:
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("hyper.discount must be in [0,1)")
        if not 0.0 < self.soft_tau <= 1.0:
            raise ValueError("hyper.soft_tau must be in (0,1]")
        if self.batch_size < 1:
            raise ValueError("hyper.batch_size must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("hyper.noise_sigma must be >= 0")
        if self.update_every < 1:
            raise ValueError("hyper.update_every must be >= 1")


@dataclass
class AgentBrain:
    actor: Mlp
    critic: Mlp
    target_actor: Mlp
    target_critic: Mlp
    actor_opt: OptState
    critic_opt: OptState


class ReplayBuffer:
    """Ring buffer of joint transitions, oldest-first eviction."""

    def __init__(self, capacity: int, n_brains: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, n_brains, obs_dim))
        self.act = np.zeros((capacity, n_brains, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, n_brains, obs_dim))
        self.done = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def add(self, obs, act, rew, next_obs, done) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self.size, size=batch_size)
        return {"obs": self.obs[idx], "act": self.act[idx],
                "rew": self.rew[idx], "next_obs": self.next_obs[idx],
                "done": self.done[idx]}


def _block_actor(n: int, obs_dim: int, act_dim: int, hidden, seeds) -> Mlp:
    """Joint actor initialized as n disjoint per-agent subnetworks.

    Hidden layers are n times the per-agent width and the cross-agent
    weight blocks start at zero, so the initial joint policy equals n
    independent local policies; training through the joint critic is
    then free to grow coordination terms in the off-diagonal blocks.
    """
    shapes = list(zip((obs_dim,) + tuple(hidden), tuple(hidden) + (act_dim,)))
    subs = [nets.init_mlp(shapes, seeds[i], "tanh") for i in range(n)]
    weights, biases = [], []
    for layer, (d_in, d_out) in enumerate(shapes):
        w = np.zeros((n * d_in, n * d_out))
        b = np.zeros(n * d_out)
        for i in range(n):
            w[i * d_in:(i + 1) * d_in, i * d_out:(i + 1) * d_out] = \
                subs[i].weights[layer]
            b[i * d_out:(i + 1) * d_out] = subs[i].biases[layer]
        weights.append(w)
        biases.append(b)
    return Mlp(weights, biases, "tanh")


def make_brains(n_agents: int, obs_dim: int, act_dim: int, hp: Hyperparams,
                seed: int, actor_hidden=(32, 32), critic_hidden=(64, 64)
                ) -> list[AgentBrain]:
    """Networks per mode; CENTRALIZED gets a single brain over the joint space."""
    if hp.mode is Mode.CENTRALIZED:
        c_in = n_agents * (obs_dim + act_dim)
        seeds = np.random.SeedSequence(seed).generate_state(
            n_agents + 1, dtype=np.uint64)
        actor = _block_actor(n_agents, obs_dim, act_dim, actor_hidden,
                             [int(s) for s in seeds[:n_agents]])
        critic_shapes = list(zip((c_in,) + critic_hidden, critic_hidden + (1,)))
        critic = nets.init_mlp(critic_shapes, int(seeds[n_agents]), "identity")
        # the joint actor moves every agent's action head at once while
        # chasing a single critic's error field; damp its step to keep
        # the joint update stable
        return [AgentBrain(
            actor=actor, critic=critic,
            target_actor=actor.copy(), target_critic=critic.copy(),
            actor_opt=nets.make_opt_state(actor, hp.actor_lr / n_agents),
            critic_opt=nets.make_opt_state(critic, hp.critic_lr))]
    else:
        n_brains, a_in, a_out = n_agents, obs_dim, act_dim
        if hp.mode is Mode.MADDPG:
            c_in = n_agents * (obs_dim + act_dim)
        else:
            c_in = obs_dim + act_dim
    seeds = np.random.SeedSequence(seed).generate_state(2 * n_brains, dtype=np.uint64)
    brains = []
    for i in range(n_brains):
        actor_shapes = list(zip((a_in,) + actor_hidden, actor_hidden + (a_out,)))
        critic_shapes = list(zip((c_in,) + critic_hidden, critic_hidden + (1,)))
        actor = nets.init_mlp(actor_shapes, int(seeds[2 * i]), "tanh")
        critic = nets.init_mlp(critic_shapes, int(seeds[2 * i + 1]), "identity")
        brains.append(AgentBrain(
            actor=actor, critic=critic,
            target_actor=actor.copy(), target_critic=critic.copy(),
            actor_opt=nets.make_opt_state(actor, hp.actor_lr),
            critic_opt=nets.make_opt_state(critic, hp.critic_lr)))
    return brains


def select_action(brain: AgentBrain, obs: np.ndarray, noise_sigma: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Deterministic actor output plus exploration noise, clipped to the box."""
    a = forward(brain.actor, obs)
    if noise_sigma > 0:
        a = a + rng.normal(0.0, noise_sigma, size=a.shape)
    return np.clip(a, -1.0, 1.0)


def _critic_input(mode: Mode, i: int, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
    """(B, M, d) observation/action batches -> critic input rows."""
    batch = obs.shape[0]
    if mode in JOINT_CRITIC_MODES:
        return np.concatenate([obs.reshape(batch, -1), act.reshape(batch, -1)], axis=1)
    return np.concatenate([obs[:, i, :], act[:, i, :]], axis=1)


def critic_target(brains: list[AgentBrain], i: int, batch: dict,
                  hp: Hyperparams) -> np.ndarray:
    """TD target y = r + discount * (1-done) * target_Q(next state, target actions)."""
    next_obs = batch["next_obs"]
    if hp.mode in JOINT_CRITIC_MODES:
        next_act = np.stack(
            [forward(b.target_actor, next_obs[:, j, :]) for j, b in enumerate(brains)],
            axis=1)
    else:
        next_act = np.zeros(batch["act"].shape)
        next_act[:, i, :] = forward(brains[i].target_actor, next_obs[:, i, :])
    x = _critic_input(hp.mode, i, next_obs, next_act)
    q_next = forward(brains[i].target_critic, x)[:, 0]
    return batch["rew"] + hp.discount * (1.0 - batch["done"]) * q_next


def update_critic(brains: list[AgentBrain], i: int, batch: dict,
                  hp: Hyperparams) -> float:
    """One Adam step on the mean squared TD error; returns the loss."""
    brain = brains[i]
    y = critic_target(brains, i, batch, hp)
    x = _critic_input(hp.mode, i, batch["obs"], batch["act"])
    q = forward(brain.critic, x)[:, 0]
    diff = q - y
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise ValueError("non-finite critic loss")
    upstream = (2.0 * diff / diff.size)[:, None]
    grad, _ = backward(brain.critic, x, upstream)
    brain.critic, brain.critic_opt = apply_update(brain.critic, grad, brain.critic_opt)
    return loss


def update_actor(brains: list[AgentBrain], i: int, batch: dict,
                 hp: Hyperparams) -> float:
    """One ascent step on mean Q with agent i's action from its online actor.

    The gradient flows through the critic's action input into the actor
    only. With a joint critic the other agents' actions are recomputed
    from their current actors, so Q is evaluated at the joint action the
    policies would actually play rather than at stale exploratory actions.
    """
    brain = brains[i]
    obs_i = batch["obs"][:, i, :]
    a_i = forward(brain.actor, obs_i)
    if hp.mode in JOINT_CRITIC_MODES and len(brains) > 1:
        act = np.stack([forward(b.actor, batch["obs"][:, j, :])
                        for j, b in enumerate(brains)], axis=1)
    else:
        act = batch["act"].copy()
    act[:, i, :] = a_i
    x = _critic_input(hp.mode, i, batch["obs"], act)
    batch_size = x.shape[0]
    upstream = np.full((batch_size, 1), -1.0 / batch_size)  # minimize -mean(Q)
    _, input_grad = backward(brain.critic, x, upstream)

    obs_dim = batch["obs"].shape[2]
    act_dim = batch["act"].shape[2]
    if hp.mode in JOINT_CRITIC_MODES:
        n = batch["obs"].shape[1]
        offset = n * obs_dim + i * act_dim
    else:
        offset = obs_dim
    a_grad = input_grad[:, offset:offset + act_dim]
    grad, _ = backward(brain.actor, obs_i, a_grad)
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite actor gradient")
    brain.actor, brain.actor_opt = apply_update(brain.actor, grad, brain.actor_opt)
    q = forward(brain.critic, x)[:, 0]
    return float(np.mean(q))


def soft_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    """theta_target <- tau * theta_online + (1 - tau) * theta_target."""
    t = flatten(target)
    o = flatten(online)
    if t.shapes != o.shapes:
        raise nets.ShapeError("target/online shape mismatch in soft update")
    mixed = tau * o.values + (1.0 - tau) * t.values
    return unflatten(nets.FlatParams(t.shapes, mixed), target.output_activation)


def update_all(brains: list[AgentBrain], buffer: ReplayBuffer,
               hp: Hyperparams, rng: np.random.Generator) -> None:
    """One critic+actor update per brain on a fresh batch, then soft targets."""
    for i in range(len(brains)):
        batch = buffer.sample(hp.batch_size, rng)
        update_critic(brains, i, batch, hp)
        update_actor(brains, i, batch, hp)
    for b in brains:
        b.target_actor = soft_update(b.target_actor, b.actor, hp.soft_tau)
        b.target_critic = soft_update(b.target_critic, b.critic, hp.soft_tau)


@dataclass
class EpisodeMetrics:
    mean_reward: float
    mean_latency_ms: float
    throughput_per_s: float
    loss_rate: float
    per_agent_delivered_variance: float
    delivered: int = 0
    generated: int = 0
    dropped: int = 0


def _joint_action(brains, joint_obs, mode: Mode, sigma: float, rng,
                  n_agents: int) -> list[np.ndarray]:
    if mode is Mode.CENTRALIZED:
        flat_obs = np.concatenate(joint_obs)
        joint = select_action(brains[0], flat_obs, sigma, rng)
        return [joint[k * env_mod.ACT_DIM:(k + 1) * env_mod.ACT_DIM]
                for k in range(n_agents)]
    return [select_action(brains[i], joint_obs[i], sigma, rng)
            for i in range(n_agents)]


def train_episode(brains: list[AgentBrain], world: WorldState, hp: Hyperparams,
                  buffer: ReplayBuffer, weights: RewardWeights,
                  rng: np.random.Generator, *, train: bool = True,
                  perturb_prob: float = 0.0, perturb_eps: float = 0.0
                  ) -> tuple[WorldState, EpisodeMetrics]:
    """Roll one episode, storing shared-reward joint transitions.

    Updates run every `update_every` steps once the buffer holds a full
    batch; with train=False no parameters change and nothing is stored.
    """
    cfg = world.config
    n = cfg.n_agents
    rewards = []
    delivered = generated = dropped = 0
    latency_sum = 0.0
    per_src = np.zeros(n, dtype=np.int64)

    joint_obs = [observe(world, i) for i in range(n)]
    for t in range(cfg.episode_len):
        acting_obs = joint_obs
        if train and perturb_prob > 0.0:
            acting_obs = [perturb_observation(o, perturb_eps, rng)
                          if rng.random() < perturb_prob else o
                          for o in joint_obs]
        actions = _joint_action(brains, acting_obs, hp.mode, hp.noise_sigma
                                if train else 0.0, rng, n)
        world, outcome = env_mod.step(world, actions)
        reward = compute_reward(outcome, weights)
        next_obs = [observe(world, i) for i in range(n)]
        done = t == cfg.episode_len - 1

        if train:
            if hp.mode is Mode.CENTRALIZED:
                buffer.add(np.concatenate(joint_obs)[None, :],
                           np.concatenate(actions)[None, :],
                           reward, np.concatenate(next_obs)[None, :], done)
            else:
                buffer.add(np.stack(joint_obs), np.stack(actions),
                           reward, np.stack(next_obs), done)
            if buffer.size >= hp.batch_size and (t + 1) % hp.update_every == 0:
                update_all(brains, buffer, hp, rng)

        rewards.append(reward)
        delivered += outcome.delivered
        generated += outcome.generated
        dropped += outcome.dropped
        latency_sum += outcome.delivered_latency_sum
        per_src += outcome.delivered_per_src
        joint_obs = next_obs

    metrics = EpisodeMetrics(
        mean_reward=float(np.mean(rewards)),
        mean_latency_ms=latency_sum / delivered if delivered else 0.0,
        throughput_per_s=delivered / (cfg.episode_len * cfg.step_seconds),
        loss_rate=dropped / generated if generated else 0.0,
        per_agent_delivered_variance=float(np.var(per_src)),
        delivered=delivered, generated=generated, dropped=dropped)
    return world, metrics

"""REDQ learner: critic ensemble with random-subset min targets and a high update-to-data ratio."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import AgentConfig
from .neural import (
    Adam,
    MlpSpec,
    ParamSet,
    adam_step,
    backward,
    forward,
    init_params,
    policy_sample,
    soft_update,
    squashed_grads,
)
from .physics import DomainError


class ReplayBuffer:
    """Fixed-capacity ring buffer sampled uniformly with replacement."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int, dtype=np.float64):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim), dtype=dtype)
        self.actions = np.zeros((capacity, action_dim), dtype=dtype)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=dtype)
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action, reward: float, next_obs, done: bool) -> None:
        if not math.isfinite(reward):
            raise DomainError("reward must be finite")
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, rng: np.random.Generator, batch_size: int) -> np.ndarray:
        if self.size == 0:
            raise DomainError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, rng: np.random.Generator, batch_size: int) -> Batch:
        idx = self.sample_indices(rng, batch_size)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx])


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray


def to_unit(action: np.ndarray) -> np.ndarray:
    """Map squashed actions from (-1, 1) onto the environment's [0, 1] box."""
    return np.clip(0.5 * (action + 1.0), 0.0, 1.0)


@dataclass
class UpdateStats:
    critic_loss: float = float("nan")
    actor_loss: float = float("nan")
    log_prob: float = float("nan")
    skipped: int = 0


class REDQAgent:
    def __init__(self, obs_dim: int, action_dim: int, config: AgentConfig, rng: np.random.Generator):
        self.config = config.validate()
        self.obs_dim, self.action_dim = obs_dim, action_dim
        self.dtype = np.dtype(config.dtype)
        hidden = tuple(config.hidden)
        self.actor = init_params(MlpSpec(obs_dim, hidden, 2 * action_dim), rng, 1, self.dtype)
        self.critics = init_params(
            MlpSpec(obs_dim + action_dim, hidden, 1), rng, config.ensemble_size, self.dtype
        )
        self.targets = self.critics.copy()
        self.log_alpha = np.array([math.log(config.init_entropy_weight)])
        self.actor_opt = Adam([self.actor.flat], config.lr_actor)
        self.critic_opt = Adam([self.critics.flat], config.lr_critic)
        self.alpha_opt = Adam([self.log_alpha], config.lr_entropy)
        self.entropy_target = (
            float(config.entropy_target) if config.entropy_target is not None else -float(action_dim)
        )
        self.critic_updates = 0
        self.actor_updates = 0
        self.alpha_updates = 0
        self.skipped = 0

    @property
    def alpha(self) -> float:
        return float(math.exp(self.log_alpha[0]))

    # -- acting -----------------------------------------------------------

    def policy_head(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray, object]:
        out, cache = forward(self.actor, np.atleast_2d(obs))
        out = out[0]
        return out[:, : self.action_dim], out[:, self.action_dim :], cache

    def act(self, obs: np.ndarray, mode: str, rng: np.random.Generator | None = None) -> np.ndarray:
        """Raw action in [0, 1]^d. ``mode`` is ``warmup``, ``explore`` or ``exploit``."""
        if mode == "warmup":
            return rng.uniform(0.0, 1.0, size=self.action_dim)
        if mode not in ("explore", "exploit"):
            raise DomainError(f"unknown mode {mode!r}")
        mean, log_std, _ = self.policy_head(obs)
        sample = policy_sample(mean, log_std, rng, deterministic=(mode == "exploit"))
        return to_unit(sample.action[0].astype(np.float64))

    # -- learning ---------------------------------------------------------

    def critic_values(self, params: ParamSet, obs: np.ndarray, actions: np.ndarray):
        x = np.concatenate([obs, actions], axis=1)
        q, cache = forward(params, x)
        return q[..., 0], cache

    def compute_target(self, batch: Batch, subset: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Shared regression target: r + discount * (min over subset of target Q - alpha log pi)."""
        subset = np.asarray(subset, dtype=int)
        if subset.size == 0:
            raise DomainError("target subset is empty")
        cfg = self.config
        rewards = cfg.reward_scale * batch.rewards
        if cfg.discount == 0:
            return rewards.astype(self.dtype)
        mean, log_std, _ = self.policy_head(batch.next_obs)
        nxt = policy_sample(mean, log_std, rng)
        q_next, _ = self.critic_values(self.targets.take(subset), batch.next_obs, to_unit(nxt.action))
        soft_v = q_next.min(axis=0) - self.alpha * nxt.log_prob
        y = rewards + cfg.discount * (1.0 - batch.dones) * soft_v
        return y.astype(self.dtype)

    def critic_loss_and_grads(self, batch: Batch, y: np.ndarray):
        """Sum over critics of each critic's batch MSE against the shared ``y``, and its gradients."""
        q, cache = self.critic_values(self.critics, batch.obs, batch.actions)
        err = q - np.asarray(y, dtype=q.dtype)[None, :]
        loss = float(np.sum(np.mean(err.astype(np.float64) ** 2, axis=1)))
        if not math.isfinite(loss):
            return loss, None
        grad_out = (2.0 / err.shape[1]) * err[..., None]
        grads, _ = backward(self.critics, cache, grad_out, input_grad=False)
        return loss, grads

    def update_critics(self, batch: Batch, y: np.ndarray) -> float:
        """One Adam step for every critic toward the same ``y``, then soft target tracking.

        Returns the critic loss averaged over the ensemble.
        """
        loss, grads = self.critic_loss_and_grads(batch, y)
        loss /= self.config.ensemble_size
        if grads is None or not adam_step(self.critic_opt, self.critics, grads):
            self.skipped += 1
            return loss
        soft_update(self.targets, self.critics, self.config.tau)
        self.critic_updates += 1
        return loss

    def actor_loss_and_grads(self, obs: np.ndarray, rng: np.random.Generator, noise: np.ndarray | None = None):
        """Loss mean[alpha log pi(a~|s) - mean_i Q_i(s, a~)] and its actor gradients.

        ``noise`` pins the reparameterization draw (used by gradient checks).
        """
        out, a_cache = forward(self.actor, obs)
        mean, log_std = out[0, :, : self.action_dim], out[0, :, self.action_dim :]
        if noise is None:
            sample = policy_sample(mean, log_std, rng)
        else:
            sample = _fixed_noise_sample(mean, log_std, noise)
        act01 = to_unit(sample.action)
        q, c_cache = self.critic_values(self.critics, obs, act01)
        members, batch = q.shape
        alpha = self.alpha
        loss = float(np.mean(alpha * sample.log_prob - q.mean(axis=0)))
        grad_q = np.full((members, batch, 1), -1.0 / (members * batch), dtype=self.dtype)
        _, g_in = backward(self.critics, c_cache, grad_q, param_grads=False)
        g_act = 0.5 * g_in.sum(axis=0)[:, self.obs_dim :]
        g_mean, g_log_std = squashed_grads(sample, g_act, np.full(batch, alpha / batch))
        g_out = np.concatenate([g_mean, g_log_std], axis=1)[None].astype(self.dtype)
        grads, _ = backward(self.actor, a_cache, g_out, input_grad=False)
        return loss, grads, sample

    def update_actor(self, batch: Batch, rng: np.random.Generator) -> tuple[float, np.ndarray]:
        loss, grads, sample = self.actor_loss_and_grads(batch.obs, rng)
        if not math.isfinite(loss) or not adam_step(self.actor_opt, self.actor, grads):
            self.skipped += 1
        else:
            self.actor_updates += 1
        return loss, sample.log_prob

    def entropy_weight_grad(self, log_probs: np.ndarray) -> float:
        """d/d(log alpha) of mean[-alpha log pi - alpha H_target]."""
        return -self.alpha * (float(np.mean(log_probs)) + self.entropy_target)

    def update_entropy_weight(self, log_probs: np.ndarray) -> float:
        grad = np.array([self.entropy_weight_grad(log_probs)])
        if self.alpha_opt.step([self.log_alpha], [grad]):
            self.alpha_updates += 1
        else:
            self.skipped += 1
        return self.alpha

    def sample_subset(self, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.config.ensemble_size, size=self.config.subset_size, replace=False)

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> UpdateStats:
        """One environment step's worth of learning: G critic rounds, then actor and entropy weight."""
        cfg = self.config
        losses = []
        for _ in range(cfg.utd_ratio):
            batch = buffer.sample(rng, cfg.batch_size)
            subset = self.sample_subset(rng)
            y = self.compute_target(batch, subset, rng)
            losses.append(self.update_critics(batch, y))
        batch = buffer.sample(rng, cfg.batch_size)
        actor_loss, log_probs = self.update_actor(batch, rng)
        self.update_entropy_weight(log_probs)
        return UpdateStats(
            critic_loss=float(np.mean(losses)),
            actor_loss=actor_loss,
            log_prob=float(np.mean(log_probs)),
            skipped=self.skipped,
        )

    # -- persistence ------------------------------------------------------

    def networks(self) -> dict[str, ParamSet]:
        return {
            "actor": self.actor,
            "critics": self.critics,
            "targets": self.targets,
            "log_alpha": ParamSet([self.log_alpha.reshape(1, 1, 1)], [np.zeros((1, 1, 1))]),
        }

    def load_networks(self, nets: dict[str, ParamSet]) -> None:
        for name in ("actor", "critics", "targets"):
            if nets[name].shapes() != getattr(self, name).shapes():
                raise DomainError(f"checkpoint {name} shapes do not match this agent")
        self.actor = nets["actor"]
        self.critics = nets["critics"]
        self.targets = nets["targets"]
        self.log_alpha = nets["log_alpha"].weights[0].reshape(1).astype(np.float64)
        self.actor_opt = Adam([self.actor.flat], self.config.lr_actor)
        self.critic_opt = Adam([self.critics.flat], self.config.lr_critic)
        self.alpha_opt = Adam([self.log_alpha], self.config.lr_entropy)


def _fixed_noise_sample(mean: np.ndarray, log_std: np.ndarray, noise: np.ndarray):
    class _Fixed:
        def standard_normal(self, shape):
            return np.broadcast_to(noise, shape).copy()

    return policy_sample(mean, log_std, _Fixed())  # type: ignore[arg-type]

"""Training loop, scheme variants, baseline policies and evaluation rollouts."""

from __future__ import annotations

import csv
import ctypes
import ctypes.util
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .agent import REDQAgent, ReplayBuffer
from .config import Config, WorldConfig
from .mdp import EpisodeSummary, Policy, UavMecEnv, episode
from .neural import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "step", "episode", "reward", "e_sum", "outage_frac", "p_t", "p_e", "p_dq",
    "alpha_ent", "critic_loss", "actor_loss",
)
METRICS_SCHEMA_VERSION = 1


def scheme_world(world: WorldConfig, scheme: str) -> WorldConfig:
    """World used to *train* a scheme (conventional trains jitter-free)."""
    if scheme == "conventional":
        return world.with_sigma(0.0)
    return world


def make_env(world: WorldConfig, scheme: str, training: bool) -> UavMecEnv:
    if scheme == "conventional":
        world = world.with_sigma(0.0)
    chance_penalty = not (scheme == "untreated" and training)
    return UavMecEnv(world, chance_penalty=chance_penalty, no_compression=(scheme == "no_compression"))


def override_movement(raw: np.ndarray, action_dim: int, rng: np.random.Generator) -> np.ndarray:
    out = np.array(raw, dtype=float)
    out[action_dim - 3 :] = rng.uniform(0.0, 1.0, size=3)
    return out


def baseline_policy(kind: str, agent: REDQAgent | None, rng: np.random.Generator, action_dim: int) -> Policy:
    """``random_move``: agent's deterministic decisions with uniformly random movement.
    ``untreated``: the agent's deterministic policy unchanged (the difference lies in its training).
    """
    if kind == "random_move":
        if agent is None:
            return lambda obs: rng.uniform(0.0, 1.0, size=action_dim)
        return lambda obs: override_movement(agent.act(obs, "exploit"), action_dim, rng)
    if kind == "untreated":
        if agent is None:
            raise ValueError("untreated baseline needs a trained agent")
        return lambda obs: agent.act(obs, "exploit")
    raise ValueError(f"unknown baseline {kind!r}")


@dataclass
class TrainResult:
    agent: REDQAgent
    metrics: list[dict]
    env_steps: int
    critic_updates: int
    actor_updates: int


_ALLOCATOR_TUNED = False


def tune_allocator() -> None:
    """Keep large numpy temporaries on the heap instead of fresh mmaps (glibc only).

    The ensemble updates allocate megabyte-sized temporaries thousands of times
    per second; serving them from mmap costs a page fault per 4 KiB.
    """
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED:
        return
    _ALLOCATOR_TUNED = True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        log.debug("mallopt unavailable; keeping default allocator settings")


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    init, env_s, agent_s = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(env_s), np.random.default_rng(agent_s)


def train(
    config: Config,
    scheme: str | None = None,
    total_steps: int | None = None,
    on_episode: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run the REDQ training loop for ``total_steps`` environment steps.

    Each step stores a transition; past warmup it runs ``utd_ratio`` critic
    rounds (fresh batch and subset each), then one actor and one entropy-weight
    update.
    """
    scheme = scheme or config.run.scheme
    steps = int(total_steps if total_steps is not None else config.run.total_steps)
    tune_allocator()
    env = make_env(config.world, scheme, training=True)
    acfg = config.agent
    init_rng, env_rng, rng = _streams(config.run.seed)
    agent = REDQAgent(env.obs_dim, env.action_dim, acfg, init_rng)
    buffer = ReplayBuffer(acfg.replay_capacity, env.obs_dim, env.action_dim, dtype=agent.dtype)
    metrics: list[dict] = []

    obs = env.reset(env_rng)
    ep, ep_terms, ep_outage, ep_losses = 0, [], 0, []
    for step in range(1, steps + 1):
        warm = step <= acfg.warmup_steps
        action = agent.act(obs, "warmup" if warm else "explore", rng)
        if scheme == "random_move":
            action = override_movement(action, env.action_dim, rng)
        next_obs, terms, done, info = env.step(action)
        buffer.add(obs, action, terms.reward, next_obs, done)
        ep_terms.append(terms)
        ep_outage += int(info["prob_violation"] > env.world.layout.rho_trj)
        if not warm:
            ep_losses.append(agent.update(buffer, rng))
        obs = next_obs
        if done:
            ep += 1
            row = {
                "step": step,
                "episode": ep,
                "reward": sum(t.reward for t in ep_terms),
                "e_sum": sum(t.e_sum for t in ep_terms),
                "outage_frac": ep_outage / len(ep_terms),
                "p_t": float(np.mean([t.p_t for t in ep_terms])),
                "p_e": float(np.mean([t.p_e for t in ep_terms])),
                "p_dq": float(np.mean([t.p_dq for t in ep_terms])),
                "alpha_ent": agent.alpha,
                "critic_loss": float(np.mean([s.critic_loss for s in ep_losses])) if ep_losses else math.nan,
                "actor_loss": float(np.mean([s.actor_loss for s in ep_losses])) if ep_losses else math.nan,
            }
            metrics.append(row)
            if on_episode is not None:
                on_episode(row)
            obs = env.reset(env_rng)
            ep_terms, ep_outage, ep_losses = [], 0, []
    return TrainResult(agent, metrics, steps, agent.critic_updates, agent.actor_updates)


def format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    """Append-only CSV writer; rows are flushed as episodes finish."""

    def __init__(self, path: str | Path, extra: dict | None = None):
        self.path = Path(path)
        self.extra = dict(extra or {})
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow([*METRICS_COLUMNS, *self.extra])

    def __call__(self, row: dict) -> None:
        self._writer.writerow([format_value(row[c]) for c in METRICS_COLUMNS] + [format_value(v) for v in self.extra.values()])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: float(v) if k in METRICS_COLUMNS else v for k, v in r.items()} for r in rows]


def save_agent(agent: REDQAgent, path: str | Path, config: Config, scheme: str) -> None:
    meta = {
        "obs_dim": agent.obs_dim,
        "action_dim": agent.action_dim,
        "user_count": config.world.n_users,
        "scheme": scheme,
        "hidden": list(agent.config.hidden),
        "ensemble_size": agent.config.ensemble_size,
        "dtype": agent.config.dtype,
    }
    save_checkpoint(path, agent.networks(), meta)


class CheckpointMismatch(ValueError):
    pass


def load_agent(path: str | Path, config: Config) -> tuple[REDQAgent, dict]:
    nets, meta = load_checkpoint(path)
    world = config.world
    if meta["obs_dim"] != world.obs_dim or meta["action_dim"] != world.action_dim:
        raise CheckpointMismatch(
            f"checkpoint was trained for {meta['user_count']} users "
            f"(obs {meta['obs_dim']}, action {meta['action_dim']}); config has {world.n_users} users"
        )
    acfg = replace(
        config.agent,
        hidden=tuple(meta["hidden"]),
        ensemble_size=int(meta["ensemble_size"]),
        subset_size=min(config.agent.subset_size, int(meta["ensemble_size"])),
        dtype=meta["dtype"],
    )
    agent = REDQAgent(world.obs_dim, world.action_dim, acfg, np.random.default_rng(0))
    agent.load_networks(nets)
    return agent, meta


@dataclass
class EvalResult:
    scheme: str
    episodes: list[EpisodeSummary]
    records: list[dict]

    def summary(self) -> dict:
        energy = np.array([e.objective for e in self.episodes])
        outage = np.array([e.outage_frac for e in self.episodes])
        battery = np.array([e.final_battery for e in self.episodes])
        return {
            "scheme": self.scheme,
            "episodes": len(self.episodes),
            "energy_mean": float(energy.mean()),
            "energy_std": float(energy.std()),
            "outage_mean": float(outage.mean()),
            "outage_std": float(outage.std()),
            "final_battery_mean": float(battery.mean()),
            "reward_mean": float(np.mean([e.total_reward for e in self.episodes])),
            "per_episode": [asdict(e) for e in self.episodes],
        }


def evaluate(
    agent: REDQAgent | None,
    world: WorldConfig,
    scheme: str,
    episodes: int,
    seed: int,
    record: bool = True,
) -> EvalResult:
    """Deterministic-policy rollouts of ``scheme`` in the (jittered) world."""
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    env = make_env(world, scheme, training=False)
    env_seed, policy_seed = np.random.SeedSequence([seed, 7]).spawn(2)
    env_rng = np.random.default_rng(env_seed)
    policy_rng = np.random.default_rng(policy_seed)
    if scheme == "random_move":
        policy = baseline_policy("random_move", agent, policy_rng, env.action_dim)
    else:
        if agent is None:
            raise ValueError(f"scheme {scheme!r} needs a trained agent")
        policy = lambda obs: agent.act(obs, "exploit")  # noqa: E731
    summaries, records = [], []
    for i in range(episodes):
        _, summ, recs = episode(env, policy, env_rng, record=record, episode_index=i)
        summaries.append(summ)
        records.extend(recs)
    return EvalResult(scheme, summaries, records)

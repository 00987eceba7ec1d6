"""State encoding, action decoding and the penalized reward around :mod:`uavmec.env`."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable

import numpy as np

from . import env as core
from .config import WorldConfig
from .env import CostBreakdown, DecisionVector, SlotState
from .physics import DomainError
from .robustness import JitterModel, speed_violation_probability

Policy = Callable[[np.ndarray], np.ndarray]


@dataclass
class RewardTerms:
    e_sum: float
    p_t: float
    p_e: float
    p_dq: float
    reward: float
    e_uav_cum: float


@dataclass
class Transition:
    obs: np.ndarray
    raw_action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


def _unit(value: float, lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    return min(1.0, max(0.0, (value - lo) / (hi - lo)))


def encode_state(state: SlotState, world: WorldConfig) -> np.ndarray:
    """Min-max scale position, battery and task descriptors into [0, 1]^(2K+4)."""
    region, tasks = world.region, world.tasks
    obs = [_unit(float(state.planned_pos[i]), region.lower[i], region.upper[i]) for i in range(3)]
    obs.append(_unit(state.battery, 0.0, world.flight.e_uav_max))
    obs.extend(_unit(t.data_bits, tasks.data_min, tasks.data_max) for t in state.tasks)
    obs.extend(_unit(t.density, tasks.density_min, tasks.density_max) for t in state.tasks)
    return np.asarray(obs, dtype=float)


def split_action(raw: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Raw layout: K offload ratios, K compression entries, K CPU weights, 3 movement entries."""
    return raw[:k], raw[k : 2 * k], raw[2 * k : 3 * k], raw[3 * k : 3 * k + 3]


def movement_vector(move: np.ndarray, max_step: float) -> np.ndarray:
    azimuth = 2.0 * math.pi * float(move[0])
    cos_polar = 2.0 * float(move[1]) - 1.0
    sin_polar = math.sqrt(max(0.0, 1.0 - cos_polar * cos_polar))
    radius = float(move[2]) * max_step
    return radius * np.array([sin_polar * math.cos(azimuth), sin_polar * math.sin(azimuth), cos_polar])


def decode_action(raw: np.ndarray, world: WorldConfig, no_compression: bool = False) -> DecisionVector:
    raw = np.asarray(raw, dtype=float)
    k = world.n_users
    if raw.shape != (world.action_dim,):
        raise DomainError(f"raw action must have length {world.action_dim}, got {raw.shape}")
    if not np.all((raw >= 0.0) & (raw <= 1.0)):
        raise DomainError("raw action entries must lie in [0, 1]")
    alpha, gamma_raw, weights, move = split_action(raw, k)
    gmin = world.compute.gamma_min
    gamma = np.ones(k) if no_compression else gmin + gamma_raw * (1.0 - gmin)
    f_alloc = weights * world.compute.f_uav_max / max(1.0, float(np.sum(weights)))
    return DecisionVector(
        displacement=movement_vector(move, world.region.max_step),
        alpha=alpha.copy(),
        gamma=np.minimum(gamma, 1.0),
        f_alloc=f_alloc,
    )


def penalty(x: float, a: float, b: float) -> float:
    """Multiplier 2 - exp(-[(x - a) / b]^+): 1 at or below the threshold, tends to 2."""
    if not b > 0:
        raise DomainError("penalty scale must be positive")
    return 2.0 - math.exp(-max(0.0, (x - a) / b))


def reward(
    costs: CostBreakdown,
    state: SlotState,
    prob_violation: float,
    world: WorldConfig,
    chance_penalty: bool = True,
) -> RewardTerms:
    """Penalized negative user energy for one slot.

    ``state`` is the post-step state, whose ``uav_energy_used`` includes this slot.
    With ``chance_penalty=False`` the speed-violation multiplier is pinned to 1.
    """
    rho = world.layout.rho_trj
    e_max = world.flight.e_uav_max
    t_max = world.t_max
    e_sum = costs.e_sum
    p_dq = penalty(prob_violation, rho, rho) if chance_penalty else 1.0
    p_e = penalty(state.uav_energy_used, e_max, e_max)
    per_user = [
        2.0 if bad else penalty(float(t), t_max, t_max)
        for t, bad in zip(costs.t_total, costs.infeasible)
    ]
    p_t = float(np.mean(per_user)) if per_user else 1.0
    return RewardTerms(
        e_sum=e_sum,
        p_t=p_t,
        p_e=p_e,
        p_dq=p_dq,
        reward=-e_sum * p_t * p_e * p_dq,
        e_uav_cum=state.uav_energy_used,
    )


class UavMecEnv:
    """Episodic wrapper: raw actions in, normalized observations and rewards out."""

    def __init__(self, world: WorldConfig, chance_penalty: bool = True, no_compression: bool = False):
        self.world = world.validate()
        self.chance_penalty = chance_penalty
        self.no_compression = no_compression
        self.users = core.user_positions(world)
        self.jitter = JitterModel(world.layout.jitter_sigma)
        self.rng: np.random.Generator | None = None
        self.state: SlotState | None = None

    @property
    def obs_dim(self) -> int:
        return self.world.obs_dim

    @property
    def action_dim(self) -> int:
        return self.world.action_dim

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.rng = rng
        self.state = core.initial_state(self.world, rng)
        return encode_state(self.state, self.world)

    def step(self, raw_action: np.ndarray) -> tuple[np.ndarray, RewardTerms, bool, dict]:
        if self.state is None or self.rng is None:
            raise RuntimeError("reset() must be called before step()")
        if self.state.slot_index > self.world.region.n_slots:
            raise RuntimeError("episode is over; call reset()")
        prev = self.state
        decision = decode_action(raw_action, self.world, self.no_compression)
        nxt, costs = core.step(self.world, prev, decision, self.rng, self.users)
        planned_disp = nxt.planned_pos - prev.planned_pos
        prob = speed_violation_probability(planned_disp, self.jitter, self.world.region.max_step)
        terms = reward(costs, nxt, prob, self.world, self.chance_penalty)
        self.state = nxt
        done = nxt.slot_index > self.world.region.n_slots
        info = {
            "slot": prev.slot_index,
            "costs": costs,
            "decision": decision,
            "prob_violation": prob,
            "planned_pos": nxt.planned_pos,
            "realized_pos": nxt.realized_pos,
        }
        return encode_state(nxt, self.world), terms, done, info


@dataclass
class EpisodeSummary:
    objective: float
    total_reward: float
    outage_frac: float
    final_battery: float
    mean_p_t: float
    mean_p_e: float
    mean_p_dq: float
    n_slots: int


def slot_record(info: dict, terms: RewardTerms, episode: int = 0) -> dict:
    """One line of the trajectory dump."""
    d: DecisionVector = info["decision"]
    return {
        "episode": episode,
        "slot": info["slot"],
        "planned_pos": [float(x) for x in info["planned_pos"]],
        "realized_pos": [float(x) for x in info["realized_pos"]],
        "decision": {
            "displacement": [float(x) for x in d.displacement],
            "alpha": [float(x) for x in d.alpha],
            "gamma": [float(x) for x in d.gamma],
            "f_alloc": [float(x) for x in d.f_alloc],
        },
        "costs": info["costs"].as_dict(),
        "reward": asdict(terms),
        "prob_violation": float(info["prob_violation"]),
    }


def episode(
    env: UavMecEnv,
    policy: Policy,
    rng: np.random.Generator,
    record: bool = False,
    episode_index: int = 0,
) -> tuple[list[Transition], EpisodeSummary, list[dict]]:
    """Roll out one N-slot episode from the start position."""
    obs = env.reset(rng)
    transitions: list[Transition] = []
    records: list[dict] = []
    terms_seen: list[RewardTerms] = []
    outages = 0
    done = False
    while not done:
        raw = np.asarray(policy(obs), dtype=float)
        next_obs, terms, done, info = env.step(raw)
        transitions.append(Transition(obs, raw, terms.reward, next_obs, done))
        terms_seen.append(terms)
        outages += int(info["prob_violation"] > env.world.layout.rho_trj)
        if record:
            records.append(slot_record(info, terms, episode_index))
        obs = next_obs
    n = len(terms_seen)
    summary = EpisodeSummary(
        objective=float(sum(t.e_sum for t in terms_seen)),
        total_reward=float(sum(t.reward for t in terms_seen)),
        outage_frac=outages / n,
        final_battery=float(env.state.battery),
        mean_p_t=float(np.mean([t.p_t for t in terms_seen])),
        mean_p_e=float(np.mean([t.p_e for t in terms_seen])),
        mean_p_dq=float(np.mean([t.p_dq for t in terms_seen])),
        n_slots=n,
    )
    return transitions, summary, records


def write_trajectory(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trajectory(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]

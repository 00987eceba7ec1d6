"""Per-slot state evolution of the single-UAV MEC system."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import WorldConfig
from .physics import (
    InfeasibleAllocationError,
    TaskInstance,
    link_rate,
    propulsion_power,
    sample_tasks,
    slot_latency,
    uav_side_costs,
    user_side_costs,
)
from .robustness import JitterModel, sample_jitter


@dataclass
class DecisionVector:
    displacement: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    f_alloc: np.ndarray


@dataclass
class SlotState:
    planned_pos: np.ndarray
    realized_pos: np.ndarray
    battery: float
    tasks: list[TaskInstance]
    slot_index: int
    # cumulative UAV energy, not floored like the battery
    uav_energy_used: float = 0.0


USER_FIELDS = (
    "t_lr", "e_lr", "t_off", "e_off", "t_relay", "e_relay",
    "t_uav_comp", "e_uav_comp", "t_bs_comp", "t_total", "e_user",
)


@dataclass
class CostBreakdown:
    t_lr: np.ndarray
    e_lr: np.ndarray
    t_off: np.ndarray
    e_off: np.ndarray
    t_relay: np.ndarray
    e_relay: np.ndarray
    t_uav_comp: np.ndarray
    e_uav_comp: np.ndarray
    t_bs_comp: np.ndarray
    t_total: np.ndarray
    e_user: np.ndarray
    e_fly: float
    e_uav_slot: float
    rate_up: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rate_down: np.ndarray = field(default_factory=lambda: np.zeros(0))
    infeasible: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    v_h: float = 0.0
    v_v: float = 0.0

    @property
    def e_sum(self) -> float:
        return float(np.sum(self.e_user))

    def as_dict(self) -> dict:
        out = {name: _finite_list(getattr(self, name)) for name in USER_FIELDS}
        out.update(
            e_fly=self.e_fly,
            e_uav_slot=self.e_uav_slot,
            rate_up=_finite_list(self.rate_up),
            rate_down=_finite_list(self.rate_down),
            infeasible=[bool(b) for b in self.infeasible],
            v_h=self.v_h,
            v_v=self.v_v,
        )
        return out


def _finite_list(a: np.ndarray) -> list:
    return [float(x) if math.isfinite(x) else None for x in np.asarray(a, dtype=float)]


def user_positions(world: WorldConfig) -> np.ndarray:
    """Fixed ground-user layout, reproducible from ``user_seed``."""
    x_lo, x_hi, y_lo, y_hi = world.layout.user_area
    rng = np.random.default_rng(world.layout.user_seed)
    k = world.n_users
    xy = np.column_stack([rng.uniform(x_lo, x_hi, size=k), rng.uniform(y_lo, y_hi, size=k)])
    return np.column_stack([xy, np.zeros(k)])


def clamp_to_region(pos: np.ndarray, world: WorldConfig) -> np.ndarray:
    return np.clip(pos, world.region.lower, world.region.upper)


def initial_state(world: WorldConfig, rng: np.random.Generator) -> SlotState:
    planned = np.asarray(world.layout.start_pos, dtype=float)
    realized = planned + sample_jitter(JitterModel(world.layout.jitter_sigma), rng)
    tasks = sample_tasks(rng, world.n_users, world.tasks, world.t_max)
    return SlotState(planned, realized, world.flight.e_uav_max, tasks, 1, 0.0)


def slot_costs(
    world: WorldConfig,
    tasks: list[TaskInstance],
    decision: DecisionVector,
    uav_pos: np.ndarray,
    prev_uav_pos: np.ndarray,
    users: np.ndarray,
) -> CostBreakdown:
    """Cost of serving ``tasks`` from ``uav_pos`` after flying from ``prev_uav_pos``."""
    radio, compute, region = world.radio, world.compute, world.region
    k = len(tasks)
    bw = world.user_bandwidth
    height = float(uav_pos[2])
    bs = np.asarray(world.layout.bs_pos, dtype=float)
    per_user = {name: np.zeros(k) for name in USER_FIELDS}
    rate_up = np.zeros(k)
    rate_down = np.zeros(k)
    infeasible = np.zeros(k, dtype=bool)
    r_down = link_rate(uav_pos, bs, radio.p_uav, bw, height, radio)
    for i, task in enumerate(tasks):
        r_up = link_rate(users[i], uav_pos, radio.p_user, bw, height, radio)
        rate_up[i], rate_down[i] = r_up, r_down
        gamma, alpha = float(decision.gamma[i]), float(decision.alpha[i])
        t_lr, e_lr, t_off, e_off = user_side_costs(task, gamma, r_up, compute, radio)
        try:
            t_relay, e_relay, t_uav, e_uav, t_bs = uav_side_costs(
                task, gamma, alpha, float(decision.f_alloc[i]), r_down, compute, radio
            )
        except InfeasibleAllocationError:
            infeasible[i] = True
            t_relay = alpha * gamma * task.data_bits / r_down
            e_relay = t_relay * radio.p_uav
            t_uav, e_uav = math.inf, 0.0
            t_bs = alpha * task.density * task.data_bits / compute.f_bs
        values = dict(
            t_lr=t_lr, e_lr=e_lr, t_off=t_off, e_off=e_off, t_relay=t_relay, e_relay=e_relay,
            t_uav_comp=t_uav, e_uav_comp=e_uav, t_bs_comp=t_bs,
            t_total=slot_latency(t_lr, t_off, t_uav, t_relay, t_bs), e_user=e_lr + e_off,
        )
        for name, value in values.items():
            per_user[name][i] = value
    move = np.asarray(uav_pos, dtype=float) - np.asarray(prev_uav_pos, dtype=float)
    v_h = float(np.hypot(move[0], move[1])) / region.slot_len
    v_v = abs(float(move[2])) / region.slot_len
    e_fly = region.slot_len * propulsion_power(v_h, v_v, world.flight)
    e_uav_slot = float(np.sum(per_user["e_relay"] + per_user["e_uav_comp"])) + e_fly
    return CostBreakdown(
        **per_user, e_fly=e_fly, e_uav_slot=e_uav_slot, rate_up=rate_up, rate_down=rate_down,
        infeasible=infeasible, v_h=v_h, v_v=v_v,
    )


def step(
    world: WorldConfig,
    state: SlotState,
    decision: DecisionVector,
    rng: np.random.Generator,
    users: np.ndarray | None = None,
) -> tuple[SlotState, CostBreakdown]:
    """Move the UAV, serve the current slot's tasks, and draw the next tasks.

    The displacement is applied first; the slot's tasks are then served from
    the new realized (jittered) position and the flight energy is charged for
    the realized move.
    """
    if users is None:
        users = user_positions(world)
    planned = clamp_to_region(state.planned_pos + np.asarray(decision.displacement, dtype=float), world)
    realized = planned + sample_jitter(JitterModel(world.layout.jitter_sigma), rng)
    costs = slot_costs(world, state.tasks, decision, realized, state.realized_pos, users)
    next_tasks = sample_tasks(rng, world.n_users, world.tasks, world.t_max)
    nxt = SlotState(
        planned_pos=planned,
        realized_pos=realized,
        battery=max(0.0, state.battery - costs.e_uav_slot),
        tasks=next_tasks,
        slot_index=state.slot_index + 1,
        uav_energy_used=state.uav_energy_used + costs.e_uav_slot,
    )
    return nxt, costs

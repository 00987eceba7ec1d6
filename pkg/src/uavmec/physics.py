"""Radio, compression, offloading, computation and propulsion cost formulas.

All functions are scalar-in/scalar-out (positions are length-3 sequences) and
raise :class:`DomainError` on inputs outside their domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ComputeParams, FlightParams, RadioParams, TaskParams


class DomainError(ValueError):
    """An argument lies outside the domain of a model formula."""


class InfeasibleLinkError(DomainError):
    pass


class InfeasibleAllocationError(DomainError):
    pass


@dataclass(frozen=True)
class TaskInstance:
    data_bits: float
    density: float
    t_max: float

    def __post_init__(self):
        if not (self.data_bits >= 0 and self.density > 0 and self.t_max > 0):
            raise DomainError(f"invalid task {self}")


def logistic_fading(sin_elevation: float, radio: RadioParams) -> float:
    """Approximate mean fading power as a logistic function of the elevation sine."""
    u = float(sin_elevation)
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"sin_elevation must lie in [0, 1], got {u}")
    z = radio.logistic_b1 + radio.logistic_b2 * u
    return radio.logistic_c1 + radio.logistic_c2 / (1.0 + math.exp(-z))


def link_rate(
    tx_pos: Sequence[float],
    rx_pos: Sequence[float],
    tx_power: float,
    bandwidth: float,
    uav_height: float,
    radio: RadioParams,
) -> float:
    """Achievable rate (bit/s) of a ground/air link with logistic fading.

    ``uav_height`` is the altitude of the aerial end; the elevation sine is
    ``uav_height / distance`` (clipped to 1 against rounding).
    """
    if tx_power < 0:
        raise DomainError("transmit power must be non-negative")
    if bandwidth <= 0:
        raise DomainError("bandwidth must be positive")
    d2 = sum((float(a) - float(b)) ** 2 for a, b in zip(tx_pos, rx_pos))
    if d2 <= 0.0:
        raise DomainError("transmitter and receiver coincide")
    dist = math.sqrt(d2)
    u = min(max(uav_height / dist, 0.0), 1.0)
    v = logistic_fading(u, radio)
    snr = radio.beta0 * tx_power * v / (bandwidth * radio.noise_psd * d2 ** (radio.path_loss_exp / 2.0))
    return bandwidth * math.log2(1.0 + snr)


def compression_density(gamma: float, epsilon_comp: float) -> float:
    """CPU cycles per input bit needed to compress to ratio ``gamma``."""
    if not 0.0 < gamma <= 1.0:
        raise DomainError(f"compression ratio must lie in (0, 1], got {gamma}")
    if gamma == 1.0:
        return 0.0
    return math.exp(epsilon_comp / gamma) - math.exp(epsilon_comp)


def user_side_costs(
    task: TaskInstance,
    gamma: float,
    rate_up: float,
    compute: ComputeParams,
    radio: RadioParams,
) -> tuple[float, float, float, float]:
    """Local compression and uplink costs: ``(t_lr, e_lr, t_off, e_off)``."""
    if not rate_up > 0:
        raise InfeasibleLinkError(f"uplink rate must be positive, got {rate_up}")
    if not compute.gamma_min <= gamma <= 1.0:
        raise DomainError(f"gamma {gamma} outside [{compute.gamma_min}, 1]")
    cycles = task.data_bits * compression_density(gamma, compute.epsilon_comp)
    t_lr = cycles / compute.f_user
    e_lr = cycles * compute.f_user**2 * compute.tau_user
    t_off = gamma * task.data_bits / rate_up
    e_off = t_off * radio.p_user
    return t_lr, e_lr, t_off, e_off


def uav_side_costs(
    task: TaskInstance,
    gamma: float,
    alpha_off: float,
    f_alloc: float,
    rate_down: float,
    compute: ComputeParams,
    radio: RadioParams,
) -> tuple[float, float, float, float, float]:
    """Relay, on-board compute and BS compute costs.

    Returns ``(t_relay, e_relay, t_uav_comp, e_uav_comp, t_bs_comp)``. A zero
    on-board workload takes zero time even when ``f_alloc`` is zero.
    """
    if not 0.0 <= alpha_off <= 1.0:
        raise DomainError(f"offload ratio must lie in [0, 1], got {alpha_off}")
    if f_alloc < 0:
        raise DomainError("CPU allocation must be non-negative")
    if not rate_down > 0:
        raise InfeasibleLinkError(f"relay rate must be positive, got {rate_down}")
    relay_bits = alpha_off * gamma * task.data_bits
    t_relay = relay_bits / rate_down
    e_relay = t_relay * radio.p_uav
    local_cycles = (1.0 - alpha_off) * task.density * task.data_bits
    if local_cycles > 0:
        if f_alloc == 0:
            raise InfeasibleAllocationError("on-board workload with zero CPU allocation")
        t_uav = local_cycles / f_alloc
    else:
        t_uav = 0.0
    e_uav = local_cycles * compute.tau_uav * f_alloc**2
    t_bs = alpha_off * task.density * task.data_bits / compute.f_bs
    return t_relay, e_relay, t_uav, e_uav, t_bs


def slot_latency(t_lr: float, t_off: float, t_uav_comp: float, t_relay: float, t_bs_comp: float) -> float:
    # on-board compute overlaps with the relay + BS branch
    return t_lr + t_off + max(t_uav_comp, t_relay + t_bs_comp)


def propulsion_power(v_h: float, v_v: float, flight: FlightParams) -> float:
    """Rotary-wing propulsion power (W) at horizontal speed v_h and vertical speed v_v."""
    if v_h < 0 or v_v < 0:
        raise DomainError("speeds must be non-negative")
    if not (math.isfinite(v_h) and math.isfinite(v_v)):
        raise DomainError("speeds must be finite")
    blade = flight.p0 * (1.0 + 3.0 * v_h**2 / flight.u_tip**2)
    parasite = 0.5 * flight.d0 * flight.rho_air * flight.s_solidity * flight.disc_area * v_h**3
    ratio = v_h**2 / (2.0 * flight.v0**2)
    induced = flight.p1 * math.sqrt(math.sqrt(1.0 + ratio**2) - ratio)
    return blade + parasite + induced + flight.p2 * v_v


def sample_tasks(
    rng: np.random.Generator, n_users: int, tasks: TaskParams, t_max: float
) -> list[TaskInstance]:
    """Draw one task per user, data size and density uniform on their ranges."""
    data = rng.uniform(tasks.data_min, tasks.data_max, size=n_users)
    density = rng.uniform(tasks.density_min, tasks.density_max, size=n_users)
    return [TaskInstance(float(d), float(c), float(t_max)) for d, c in zip(data, density)]

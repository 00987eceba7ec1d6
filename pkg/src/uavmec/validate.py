"""Self-check suites: physics identities, chance-probability fidelity, gradients, REDQ accounting."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .agent import Batch, REDQAgent, ReplayBuffer, to_unit
from .config import AgentConfig, Config, ComputeParams, FlightParams, RadioParams, WorldConfig, desk_profile
from .env import DecisionVector, slot_costs, user_positions
from .neural import finite_difference_grads, policy_sample
from .physics import (
    TaskInstance,
    compression_density,
    link_rate,
    propulsion_power,
    slot_latency,
    uav_side_costs,
    user_side_costs,
)
from .robustness import JitterModel, mc_violation_probability, speed_violation_probability

CHANCE_TOL = 3e-3
CHANCE_SAMPLES = 1_000_000
GRAD_TOL = 1e-4
GRAD_STEP = 1e-5
HOVER_TOL = 1e-9
CHANCE_SIGMAS = (0.5, 1.0, 2.0)
CHANCE_FRACTIONS = (0.0, 0.5, 0.9, 1.1)


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str
    value: float | None = None
    threshold: float | None = None
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.suite}/{self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(suite: str, name: str, fn: Callable[[], tuple[bool, str, float | None, float | None]]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        passed, detail, value, threshold = fn()
    except Exception as exc:  # a crashing check is a failed check
        passed, detail, value, threshold = False, f"raised {type(exc).__name__}: {exc}", None, None
    return CheckResult(suite, name, bool(passed), detail, value, threshold, time.perf_counter() - t0)


# -- physics --------------------------------------------------------------

def _hover() -> tuple[bool, str, float, float]:
    flight = FlightParams()
    got = propulsion_power(0.0, 0.0, flight)
    want = flight.p0 + flight.p1
    rel = abs(got - want) / want
    return rel <= HOVER_TOL, f"P(0,0)={got!r}, p0+p1={want!r}, rel err {rel:.2e}", rel, HOVER_TOL


def _j_at_one() -> tuple[bool, str, float, float]:
    j = compression_density(1.0, ComputeParams().epsilon_comp)
    return j == 0.0, f"J(1) = {j!r}", j, 0.0


def _zero_power_rate() -> tuple[bool, str, float, float]:
    r = link_rate((0.0, 0.0, 0.0), (30.0, 40.0, 120.0), 0.0, 1e6, 120.0, RadioParams())
    return r == 0.0, f"rate(p=0) = {r!r}", r, 0.0


def _aggregation(rng: np.random.Generator, n: int = 10_000) -> tuple[bool, str, float, float]:
    """Per-user latency/energy sums and the UAV energy sum on ``n`` random cost vectors."""
    world = desk_profile().world
    compute, radio = world.compute, world.radio
    users = user_positions(world)
    k = world.n_users
    worst = 0.0
    for _ in range(n // k):
        tasks = [
            TaskInstance(float(rng.uniform(1e5, 3e6)), float(rng.uniform(500, 1200)), world.t_max)
            for _ in range(k)
        ]
        w = rng.uniform(0.0, 1.0, size=k)
        decision = DecisionVector(
            displacement=np.zeros(3),
            alpha=rng.uniform(0.0, 1.0, size=k),
            gamma=rng.uniform(compute.gamma_min, 1.0, size=k),
            f_alloc=w * compute.f_uav_max / max(1.0, float(w.sum())),
        )
        pos = np.array([rng.uniform(0, 500), rng.uniform(0, 500), rng.uniform(100, 200)])
        prev = pos + rng.uniform(-15.0, 15.0, size=3)
        c = slot_costs(world, tasks, decision, pos, prev, users)
        for i, task in enumerate(tasks):
            t_lr, e_lr, t_off, e_off = user_side_costs(task, float(decision.gamma[i]), c.rate_up[i], compute, radio)
            parts = uav_side_costs(
                task, float(decision.gamma[i]), float(decision.alpha[i]), float(decision.f_alloc[i]),
                c.rate_down[i], compute, radio,
            )
            t_relay, e_relay, t_uav, e_uav, t_bs = parts
            want_t = t_lr + t_off + max(t_uav, t_relay + t_bs)
            want_e = e_lr + e_off
            worst = max(
                worst,
                abs(c.t_total[i] - want_t) / max(want_t, 1e-300),
                abs(c.e_user[i] - want_e) / max(want_e, 1e-300),
                abs(c.t_total[i] - slot_latency(c.t_lr[i], c.t_off[i], c.t_uav_comp[i], c.t_relay[i], c.t_bs_comp[i]))
                / max(c.t_total[i], 1e-300),
            )
        want_uav = float(np.sum(c.e_relay + c.e_uav_comp)) + c.e_fly
        worst = max(worst, abs(c.e_uav_slot - want_uav) / want_uav)
    tol = 1e-12
    return worst <= tol, f"max rel deviation {worst:.2e} over {n} user cost vectors", worst, tol


def physics_suite(rng: np.random.Generator) -> list[CheckResult]:
    return [
        _timed("physics", "hover_power", _hover),
        _timed("physics", "compression_density_at_one", _j_at_one),
        _timed("physics", "zero_power_rate", _zero_power_rate),
        _timed("physics", "aggregation_identities", lambda: _aggregation(rng)),
    ]


# -- chance constraint ----------------------------------------------------

def chance_grid(
    rng: np.random.Generator, n_samples: int = CHANCE_SAMPLES, limit: float | None = None
) -> list[dict]:
    """Analytic vs Monte-Carlo violation probability on the (|d|, sigma) grid."""
    limit = limit if limit is not None else WorldConfig().region.max_step
    rows = []
    for frac in CHANCE_FRACTIONS:
        d = np.array([frac * limit, 0.0, 0.0])
        for sigma in CHANCE_SIGMAS:
            model = JitterModel(sigma)
            exact = speed_violation_probability(d, model, limit)
            mc = mc_violation_probability(d, model, limit, n_samples, rng)
            rows.append({"norm": frac * limit, "sigma": sigma, "analytic": exact, "mc": mc, "abs_err": abs(exact - mc)})
    return rows


def chance_suite(rng: np.random.Generator, n_samples: int = CHANCE_SAMPLES) -> list[CheckResult]:
    def run():
        rows = chance_grid(rng, n_samples)
        worst = max(r["abs_err"] for r in rows)
        return worst <= CHANCE_TOL, f"max |analytic-MC| = {worst:.2e} over {len(rows)} cells, threshold {CHANCE_TOL:g}", worst, CHANCE_TOL

    return [_timed("chance", "analytic_vs_monte_carlo", run)]


# -- gradients ------------------------------------------------------------

def small_agent(rng: np.random.Generator, obs_dim: int = 6, action_dim: int = 4, **overrides) -> REDQAgent:
    """Float64 agent with two hidden layers of 16 units (used by the oracle suites)."""
    cfg = AgentConfig(
        ensemble_size=overrides.pop("ensemble_size", 3),
        subset_size=overrides.pop("subset_size", 2),
        batch_size=overrides.pop("batch_size", 8),
        replay_capacity=overrides.pop("replay_capacity", 64),
        hidden=(16, 16),
        dtype="float64",
        **overrides,
    )
    return REDQAgent(obs_dim, action_dim, cfg, rng)


def random_batch(rng: np.random.Generator, n: int, obs_dim: int, action_dim: int) -> Batch:
    return Batch(
        obs=rng.uniform(0.0, 1.0, size=(n, obs_dim)),
        actions=rng.uniform(0.0, 1.0, size=(n, action_dim)),
        rewards=rng.normal(size=n),
        next_obs=rng.uniform(0.0, 1.0, size=(n, obs_dim)),
        dones=np.zeros(n, dtype=bool),
    )


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest entrywise |a - n| / max(|a|, |n|, floor)."""
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def gradient_errors(rng: np.random.Generator) -> dict[str, float]:
    """Max relative error of analytic vs central-difference gradients for each loss."""
    agent = small_agent(rng)
    batch = random_batch(rng, 8, agent.obs_dim, agent.action_dim)
    y = rng.normal(size=8)
    out = {}

    _, grads = agent.critic_loss_and_grads(batch, y)
    numeric = finite_difference_grads(lambda: agent.critic_loss_and_grads(batch, y)[0], agent.critics.arrays(), GRAD_STEP)
    out["critic_loss"] = max(relative_error(g, n) for g, n in zip(grads, numeric))

    noise = rng.normal(size=(8, agent.action_dim))
    _, grads, _ = agent.actor_loss_and_grads(batch.obs, rng, noise=noise)
    numeric = finite_difference_grads(
        lambda: agent.actor_loss_and_grads(batch.obs, rng, noise=noise)[0], agent.actor.arrays(), GRAD_STEP
    )
    out["actor_loss"] = max(relative_error(g, n) for g, n in zip(grads, numeric))

    log_probs = rng.normal(size=8)

    def entropy_loss() -> float:
        alpha = math.exp(agent.log_alpha[0])
        return float(np.mean(-alpha * log_probs - alpha * agent.entropy_target))

    numeric = finite_difference_grads(entropy_loss, [agent.log_alpha], GRAD_STEP)[0]
    out["entropy_weight"] = relative_error(np.array([agent.entropy_weight_grad(log_probs)]), numeric)
    return out


def gradient_suite(rng: np.random.Generator) -> list[CheckResult]:
    results = []
    errors: dict[str, float] = {}

    def compute():
        errors.update(gradient_errors(rng))
        return True, "computed", None, None

    setup = _timed("gradients", "finite_differences", compute)
    if not setup.passed:
        return [setup]
    for name, err in errors.items():
        results.append(
            CheckResult("gradients", name, err <= GRAD_TOL, f"max rel err {err:.2e}, threshold {GRAD_TOL:g}", err, GRAD_TOL,
                        setup.seconds / len(errors))
        )
    return results


# -- REDQ mechanics -------------------------------------------------------

def _zero_discount_target(rng: np.random.Generator):
    agent = small_agent(rng, discount=0.0, reward_scale=1.0)
    batch = random_batch(rng, 32, agent.obs_dim, agent.action_dim)
    y = agent.compute_target(batch, agent.sample_subset(rng), rng)
    ok = bool(np.array_equal(y, batch.rewards))
    return ok, "targets equal rewards exactly" if ok else "targets differ from rewards", None, None


def accounting_config(steps_past_warmup: int = 500, utd: int = 20) -> Config:
    """Tiny world and small networks for the update-accounting run."""
    base = desk_profile()
    world = replace(
        base.world,
        region=replace(base.world.region, n_slots=10),
        layout=replace(base.world.layout, user_count=2),
    )
    agent = replace(
        base.agent,
        ensemble_size=10,
        subset_size=2,
        utd_ratio=utd,
        batch_size=32,
        replay_capacity=2000,
        warmup_steps=50,
        hidden=(16, 16),
    )
    run = replace(base.run, total_steps=50 + steps_past_warmup, seed=11)
    return Config(world=world, agent=agent, run=run, profile="desk")


def _accounting(steps_past_warmup: int = 500, utd: int = 20):
    from .training import train  # local import: training depends on this module's peers

    cfg = accounting_config(steps_past_warmup, utd)
    res = train(cfg)
    want_c, want_a = steps_past_warmup * utd, steps_past_warmup
    ok = res.critic_updates == want_c and res.actor_updates == want_a
    detail = f"critic updates {res.critic_updates} (want {want_c}), actor updates {res.actor_updates} (want {want_a})"
    return ok, detail, float(res.critic_updates), float(want_c)


def subset_min_violations(agent: REDQAgent, batches: list[Batch], rng: np.random.Generator) -> int:
    """Count samples where the subset minimum falls below the full-ensemble minimum."""
    bad = 0
    for batch in batches:
        mean, log_std, _ = agent.policy_head(batch.next_obs)
        nxt = policy_sample(mean, log_std, rng)
        q_all, _ = agent.critic_values(agent.targets, batch.next_obs, to_unit(nxt.action))
        subset = agent.sample_subset(rng)
        bad += int(np.count_nonzero(q_all[subset].min(axis=0) < q_all.min(axis=0)))
    return bad


def _subset_min(rng: np.random.Generator, n_batches: int = 200):
    agent = small_agent(rng, ensemble_size=10, subset_size=2, batch_size=32)
    buffer = ReplayBuffer(256, agent.obs_dim, agent.action_dim)
    for _ in range(256):
        buffer.add(rng.uniform(size=agent.obs_dim), rng.uniform(size=agent.action_dim), float(rng.normal()),
                   rng.uniform(size=agent.obs_dim), False)
    batches = [buffer.sample(rng, 32) for _ in range(n_batches)]
    bad = subset_min_violations(agent, batches, rng)
    return bad == 0, f"{bad} violations over {n_batches} batches", float(bad), 0.0


def redq_suite(rng: np.random.Generator, steps_past_warmup: int = 500, utd: int = 20) -> list[CheckResult]:
    return [
        _timed("redq", "zero_discount_target", lambda: _zero_discount_target(rng)),
        _timed("redq", "update_accounting", lambda: _accounting(steps_past_warmup, utd)),
        _timed("redq", "subset_min_bound", lambda: _subset_min(rng)),
    ]


SUITES: dict[str, Callable[[np.random.Generator], list[CheckResult]]] = {
    "physics": physics_suite,
    "chance": chance_suite,
    "gradients": gradient_suite,
    "redq": redq_suite,
}


def run_checks(seed: int = 0, suites: list[str] | None = None) -> list[CheckResult]:
    names = suites or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s) {unknown}")
    out: list[CheckResult] = []
    for i, name in enumerate(names):
        rng = np.random.default_rng([seed, i])
        out.extend(SUITES[name](rng))
    return out


def report(results: list[CheckResult]) -> dict:
    return {
        "passed": all(r.passed for r in results),
        "checks": [
            {
                "suite": r.suite,
                "name": r.name,
                "passed": r.passed,
                "detail": r.detail,
                "value": r.value,
                "threshold": r.threshold,
                "seconds": round(r.seconds, 3),
            }
            for r in results
        ],
    }

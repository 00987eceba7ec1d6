"""Experiment orchestration: which trained agent serves which scheme, and axis sweeps."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .agent import REDQAgent
from .config import SWEEP_AXES, Config, WorldConfig, config_fingerprint, desk_profile
from .training import (
    EvalResult,
    MetricsWriter,
    evaluate,
    format_value,
    load_agent,
    read_metrics,
    save_agent,
    train,
)

log = logging.getLogger(__name__)

# Schemes that reuse another scheme's policy at evaluation time.
TRAINING_KEY = {
    "proposed": "proposed",
    "no_compression": "proposed",
    "random_move": "proposed",
    "untreated": "untreated",
    "conventional": "conventional",
}

SWEEP_COLUMNS = (
    "axis", "value", "scheme", "episodes", "energy_mean", "energy_std",
    "outage_mean", "outage_std", "final_battery_mean", "reward_mean",
)


@dataclass
class AgentPool:
    """Trained agents keyed by (training key, user count).

    Agents come from explicit checkpoints when given, else from a training run
    whose checkpoint is written under ``cache_dir``.
    """

    config: Config
    cache_dir: Path | None = None
    checkpoints: dict[str, str] = field(default_factory=dict)
    _agents: dict[tuple[str, int], REDQAgent] = field(default_factory=dict)

    def get(self, scheme: str, world: WorldConfig | None = None) -> REDQAgent:
        world = world or self.config.world
        key = (TRAINING_KEY[scheme], world.n_users)
        if key not in self._agents:
            self._agents[key] = self._obtain(key[0], world)
        return self._agents[key]

    def _obtain(self, train_key: str, world: WorldConfig) -> REDQAgent:
        cfg = replace(self.config, world=world)
        if train_key in self.checkpoints:
            agent, _ = load_agent(self.checkpoints[train_key], cfg)
            return agent
        path = None
        if self.cache_dir is not None:
            path = self.cache_dir / f"{train_key}_k{world.n_users}.npz"
            if path.exists():
                agent, _ = load_agent(path, cfg)
                return agent
        log.info("training %s agent for %d users (%d steps)", train_key, world.n_users, cfg.run.total_steps)
        agent = train(cfg, scheme=train_key).agent
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_agent(agent, path, cfg, train_key)
        return agent


def evaluate_scheme(pool: AgentPool, world: WorldConfig, scheme: str, episodes: int, seed: int,
                    record: bool = False) -> EvalResult:
    return evaluate(pool.get(scheme, world), world, scheme, episodes, seed, record=record)


def axis_points(config: Config, axis: str) -> list[tuple[float, WorldConfig]]:
    """(axis value, evaluation world) pairs, sorted by value.

    Task-size points are reported at the midpoint of their data-size range.
    """
    world, run = config.world, config.run
    if axis == "users":
        pts = [(float(k), world.with_users(k)) for k in run.user_sweep]
    elif axis == "sigma":
        pts = [(float(s), world.with_sigma(s)) for s in run.sigma_sweep]
    elif axis == "task_size":
        pts = [(0.5 * (lo + hi), world.with_task_size(lo, hi)) for lo, hi in run.task_size_sweep]
    else:
        raise ValueError(f"unknown axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    if not pts:
        raise ValueError(f"sweep list for axis {axis!r} is empty")
    return sorted(pts, key=lambda p: p[0])


def sweep(pool: AgentPool, axis: str, episodes: int, seed: int, schemes: tuple[str, ...] | None = None) -> list[dict]:
    """One row per (axis value, scheme) with energy and outage aggregates."""
    schemes = schemes or pool.config.run.sweep_schemes
    rows = []
    for value, world in axis_points(pool.config, axis):
        for scheme in schemes:
            s = evaluate_scheme(pool, world, scheme, episodes, seed).summary()
            rows.append({
                "axis": axis,
                "value": value,
                "scheme": scheme,
                "episodes": s["episodes"],
                "energy_mean": s["energy_mean"],
                "energy_std": s["energy_std"],
                "outage_mean": s["outage_mean"],
                "outage_std": s["outage_std"],
                "final_battery_mean": s["final_battery_mean"],
                "reward_mean": s["reward_mean"],
            })
    return rows


def write_rows(rows: list[dict], path: str | Path, columns=SWEEP_COLUMNS) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row[c]) for c in columns])


def read_rows(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for c in SWEEP_COLUMNS:
            if c not in ("axis", "scheme"):
                r[c] = float(r[c])
    return rows


# -- desk-scale acceptance runs ------------------------------------------------

ACCEPTANCE_SIGMAS = (0.5, 1.0, 2.0, 3.0)
ACCEPTANCE_EVAL_SEED = 777


def acceptance_config(seed: int = 0) -> Config:
    """K=5, N=20, 5e4 steps, defaults otherwise."""
    cfg = desk_profile()
    return replace(cfg, run=replace(cfg.run, seed=seed, total_steps=50000))


def _cache_key(cfg: Config) -> str:
    return hashlib.sha256(config_fingerprint(cfg).encode()).hexdigest()[:16]


def desk_acceptance(cache_root: str | Path, cfg: Config | None = None) -> dict:
    """Train proposed and untreated once, evaluate every scheme needed for the learning checks.

    Results are cached under ``cache_root/<config hash>``; a finished run is
    never retrained. Returns the evaluation summaries (without per-episode rows).
    """
    cfg = cfg or acceptance_config()
    root = Path(cache_root) / _cache_key(cfg)
    root.mkdir(parents=True, exist_ok=True)
    result_path = root / "evaluation.json"
    if result_path.exists():
        return json.loads(result_path.read_text(encoding="utf-8"))

    agents, seconds = {}, {}
    for key in ("proposed", "untreated"):
        ckpt = root / f"{key}.npz"
        if ckpt.exists():
            agents[key], _ = load_agent(ckpt, cfg)
            continue
        writer = MetricsWriter(root / f"{key}_metrics.csv")
        start = time.perf_counter()
        try:
            agents[key] = train(cfg, scheme=key, on_episode=writer).agent
        finally:
            writer.close()
        seconds[key] = time.perf_counter() - start
        save_agent(agents[key], ckpt, cfg, key)
        (root / f"{key}_seconds.txt").write_text(f"{seconds[key]:.1f}\n", encoding="utf-8")

    def run(scheme: str, sigma: float) -> dict:
        world = cfg.world.with_sigma(sigma)
        agent = agents[TRAINING_KEY[scheme]]
        s = evaluate(agent, world, scheme, cfg.run.eval_episodes, ACCEPTANCE_EVAL_SEED, record=False).summary()
        s.pop("per_episode")
        s["sigma"] = sigma
        return s

    base_sigma = cfg.world.layout.jitter_sigma
    out = {
        "train_seconds": {k: float((root / f"{k}_seconds.txt").read_text()) for k in agents},
        "metrics": {k: read_metrics(root / f"{k}_metrics.csv") for k in agents},
        "proposed": run("proposed", base_sigma),
        "random_move": run("random_move", base_sigma),
        "no_compression": run("no_compression", base_sigma),
        "sigma_sweep": {
            scheme: [run(scheme, s) for s in ACCEPTANCE_SIGMAS] for scheme in ("proposed", "untreated")
        },
    }
    result_path.write_text(json.dumps(out, indent=1), encoding="utf-8")
    return out

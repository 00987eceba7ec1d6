"""Simulation, agent and run parameters, plus the flat key/value config loader.

Every parameter lives in a frozen dataclass. A config file is a flat YAML
mapping whose keys are the dataclass field names (all unique across
sections) plus ``profile``, which selects the base defaults to override.
Unknown keys are rejected so a typo can never silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration values."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def dbm_per_hz_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class RadioParams:
    beta0: float = 1e-5
    path_loss_exp: float = 2.2
    total_bandwidth: float = 30e6
    noise_psd: float = dbm_per_hz_to_watt(-174.0)
    p_user: float = 0.1
    p_uav: float = 0.5
    logistic_c1: float = 0.2
    logistic_c2: float = 0.8
    logistic_b1: float = -4.3221
    logistic_b2: float = 6.075

    def validate(self) -> None:
        _positive(self, "beta0", "total_bandwidth", "noise_psd", "logistic_c1", "logistic_c2")
        _non_negative(self, "p_user", "p_uav")
        if self.path_loss_exp < 2:
            raise ConfigError("path_loss_exp", "must be >= 2")
        if not math.isclose(self.logistic_c1 + self.logistic_c2, 1.0, abs_tol=1e-12):
            raise ConfigError("logistic_c2", "logistic_c1 + logistic_c2 must equal 1")
        if self.logistic_b1 >= 0:
            raise ConfigError("logistic_b1", "must be negative")
        if self.logistic_b2 <= 0:
            raise ConfigError("logistic_b2", "must be positive")


@dataclass(frozen=True)
class ComputeParams:
    f_user: float = 1.5e9
    f_uav_max: float = 30e9
    f_bs: float = 15e9
    tau_user: float = 1e-29
    tau_uav: float = 1e-29
    epsilon_comp: float = 2.0
    gamma_min: float = 0.5

    def validate(self) -> None:
        _positive(self, "f_user", "f_uav_max", "f_bs", "tau_user", "tau_uav", "epsilon_comp")
        if not 0 < self.gamma_min <= 1:
            raise ConfigError("gamma_min", "must lie in (0, 1]")


@dataclass(frozen=True)
class FlightParams:
    p0: float = 79.86
    p1: float = 88.63
    p2: float = 10.0
    u_tip: float = 120.0
    v0: float = 4.03
    d0: float = 0.6
    rho_air: float = 1.225
    s_solidity: float = 0.05
    disc_area: float = 0.503
    e_uav_max: float = 20000.0

    def validate(self) -> None:
        _positive(self, *(f.name for f in fields(self)))


@dataclass(frozen=True)
class Region:
    x_min: float = 0.0
    x_max: float = 500.0
    y_min: float = 0.0
    y_max: float = 500.0
    h_min: float = 100.0
    h_max: float = 200.0
    v_max: float = 20.0
    slot_len: float = 1.5
    n_slots: int = 50

    def validate(self) -> None:
        for lo, hi in (("x_min", "x_max"), ("y_min", "y_max"), ("h_min", "h_max")):
            if not getattr(self, lo) < getattr(self, hi):
                raise ConfigError(hi, f"must exceed {lo}")
        _positive(self, "v_max", "slot_len")
        if int(self.n_slots) != self.n_slots or self.n_slots < 1:
            raise ConfigError("n_slots", "must be an integer >= 1")

    @property
    def lower(self) -> tuple[float, float, float]:
        return (self.x_min, self.y_min, self.h_min)

    @property
    def upper(self) -> tuple[float, float, float]:
        return (self.x_max, self.y_max, self.h_max)

    @property
    def max_step(self) -> float:
        """Largest admissible displacement between adjacent slots (m)."""
        return self.v_max * self.slot_len


@dataclass(frozen=True)
class TaskParams:
    data_min: float = 1e6
    data_max: float = 2.5e6
    density_min: float = 700.0
    density_max: float = 1000.0
    # None means "equal to the slot length".
    t_max: float | None = None

    def validate(self) -> None:
        _positive(self, "data_min", "density_min")
        if self.data_max < self.data_min:
            raise ConfigError("data_max", "must be >= data_min")
        if self.density_max < self.density_min:
            raise ConfigError("density_max", "must be >= density_min")
        if self.t_max is not None and self.t_max <= 0:
            raise ConfigError("t_max", "must be positive")


@dataclass(frozen=True)
class Layout:
    user_count: int = 15
    start_pos: tuple[float, float, float] = (0.0, 0.0, 150.0)
    bs_pos: tuple[float, float, float] = (500.0, 500.0, 0.0)
    # Users are dropped uniformly in [x_lo, x_hi] x [y_lo, y_hi] at ground level.
    user_area: tuple[float, float, float, float] = (125.0, 375.0, 125.0, 375.0)
    user_seed: int = 2024
    jitter_sigma: float = 1.0
    rho_trj: float = 0.1

    def validate(self) -> None:
        if int(self.user_count) != self.user_count or self.user_count < 1:
            raise ConfigError("user_count", "must be an integer >= 1")
        if len(self.start_pos) != 3:
            raise ConfigError("start_pos", "needs three coordinates")
        if len(self.bs_pos) != 3:
            raise ConfigError("bs_pos", "needs three coordinates")
        if len(self.user_area) != 4:
            raise ConfigError("user_area", "needs [x_lo, x_hi, y_lo, y_hi]")
        x_lo, x_hi, y_lo, y_hi = self.user_area
        if x_hi < x_lo or y_hi < y_lo:
            raise ConfigError("user_area", "bounds are inverted")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma", "must be >= 0")
        if not 0 < self.rho_trj < 1:
            raise ConfigError("rho_trj", "must lie in (0, 1)")


@dataclass(frozen=True)
class WorldConfig:
    radio: RadioParams = field(default_factory=RadioParams)
    compute: ComputeParams = field(default_factory=ComputeParams)
    flight: FlightParams = field(default_factory=FlightParams)
    region: Region = field(default_factory=Region)
    tasks: TaskParams = field(default_factory=TaskParams)
    layout: Layout = field(default_factory=Layout)

    def validate(self) -> WorldConfig:
        for part in (self.radio, self.compute, self.flight, self.region, self.tasks, self.layout):
            part.validate()
        sx = self.layout.start_pos
        lo, hi = self.region.lower, self.region.upper
        if any(not lo[i] <= sx[i] <= hi[i] for i in range(3)):
            raise ConfigError("start_pos", "must lie inside the flight region")
        return self

    @property
    def n_users(self) -> int:
        return int(self.layout.user_count)

    @property
    def t_max(self) -> float:
        return self.tasks.t_max if self.tasks.t_max is not None else self.region.slot_len

    @property
    def user_bandwidth(self) -> float:
        """Equal OFDMA split of the total band."""
        return self.radio.total_bandwidth / self.n_users

    @property
    def obs_dim(self) -> int:
        return 2 * self.n_users + 4

    @property
    def action_dim(self) -> int:
        return 3 * self.n_users + 3

    def with_sigma(self, sigma: float) -> WorldConfig:
        return replace(self, layout=replace(self.layout, jitter_sigma=float(sigma)))

    def with_users(self, k: int) -> WorldConfig:
        return replace(self, layout=replace(self.layout, user_count=int(k)))

    def with_task_size(self, lo: float, hi: float) -> WorldConfig:
        return replace(self, tasks=replace(self.tasks, data_min=float(lo), data_max=float(hi)))


@dataclass(frozen=True)
class AgentConfig:
    ensemble_size: int = 10
    subset_size: int = 2
    utd_ratio: int = 20
    discount: float = 0.9
    batch_size: int = 256
    replay_capacity: int = 20000
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    lr_entropy: float = 3e-4
    tau: float = 0.995
    # None means minus the action dimension.
    entropy_target: float | None = None
    init_entropy_weight: float = 0.1
    warmup_steps: int = 1000
    hidden: tuple[int, ...] = (128, 128)
    # Multiplies environment rewards before they reach the learner (J -> O(1)).
    reward_scale: float = 100.0
    dtype: str = "float32"

    def validate(self) -> AgentConfig:
        if not 1 <= self.subset_size <= self.ensemble_size:
            raise ConfigError("subset_size", "must satisfy 1 <= subset_size <= ensemble_size")
        if self.utd_ratio < 1:
            raise ConfigError("utd_ratio", "must be >= 1")
        if not 0 <= self.discount <= 1:
            raise ConfigError("discount", "must lie in [0, 1]")
        if not 0 <= self.tau <= 1:
            raise ConfigError("tau", "must lie in [0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.replay_capacity < self.batch_size:
            raise ConfigError("replay_capacity", "must hold at least one batch")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps", "must be >= 0")
        if self.init_entropy_weight <= 0:
            raise ConfigError("init_entropy_weight", "must be positive")
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ConfigError("hidden", "needs at least one positive width")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype", "must be float32 or float64")
        _positive(self, "lr_actor", "lr_critic", "lr_entropy", "reward_scale")
        return self


SCHEMES = ("proposed", "random_move", "untreated", "no_compression", "conventional")
SWEEP_AXES = ("users", "sigma", "task_size")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    total_steps: int = 50000
    eval_episodes: int = 20
    scheme: str = "proposed"
    out_dir: str = "runs/default"
    user_sweep: tuple[int, ...] = (5, 7, 9, 11, 13, 15)
    sigma_sweep: tuple[float, ...] = (0.5, 1.0, 2.0, 3.0)
    task_size_sweep: tuple[tuple[float, float], ...] = (
        (1.0e6, 1.25e6),
        (1.25e6, 1.5e6),
        (1.5e6, 1.75e6),
        (1.75e6, 2.0e6),
    )
    sweep_schemes: tuple[str, ...] = ("proposed", "random_move", "untreated", "no_compression")

    def validate(self) -> RunConfig:
        if self.total_steps < 1:
            raise ConfigError("total_steps", "must be >= 1")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes", "must be >= 1")
        if self.scheme not in SCHEMES:
            raise ConfigError("scheme", f"must be one of {', '.join(SCHEMES)}")
        bad = [s for s in self.sweep_schemes if s not in SCHEMES]
        if bad:
            raise ConfigError("sweep_schemes", f"unknown scheme(s) {bad}")
        if any(int(k) < 1 for k in self.user_sweep):
            raise ConfigError("user_sweep", "user counts must be >= 1")
        for pair in self.task_size_sweep:
            if len(pair) != 2 or pair[0] <= 0 or pair[1] < pair[0]:
                raise ConfigError("task_size_sweep", f"bad range {pair!r}")
        return self


@dataclass(frozen=True)
class Config:
    world: WorldConfig = field(default_factory=WorldConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    run: RunConfig = field(default_factory=RunConfig)
    profile: str = "full"

    def validate(self) -> Config:
        self.world.validate()
        self.agent.validate()
        self.run.validate()
        return self


def full_profile() -> Config:
    """Full-scale setting: 15 users, 50 slots."""
    return Config(profile="full")


def desk_profile() -> Config:
    """Reduced setting that trains in hours on one CPU core."""
    base = Config()
    world = replace(
        base.world,
        region=replace(base.world.region, n_slots=20),
        layout=replace(base.world.layout, user_count=5),
    )
    return Config(world=world, agent=base.agent, run=replace(base.run, total_steps=50000), profile="desk")


PROFILES = {"full": full_profile, "desk": desk_profile}


# flat key -> (section path, field)
def _key_table() -> dict[str, tuple[tuple[str, ...], dataclasses.Field]]:
    table: dict[str, tuple[tuple[str, ...], dataclasses.Field]] = {}

    def walk(cls: type, path: tuple[str, ...]) -> None:
        for f in fields(cls):
            default = f.default_factory() if f.default_factory is not dataclasses.MISSING else None
            if default is not None and dataclasses.is_dataclass(default):
                walk(type(default), path + (f.name,))
                continue
            if f.name in table:
                raise RuntimeError(f"duplicate config key {f.name}")
            table[f.name] = (path, f)

    walk(Config, ())
    return table


KEYS = _key_table()


def _coerce(key: str, value: Any, current: Any) -> Any:
    if value is None:
        if key in ("t_max", "entropy_target"):
            return None
        raise ConfigError(key, "null is not allowed")
    try:
        if isinstance(current, bool):
            return bool(value)
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError("expected an integer")
            return int(value)
        if isinstance(current, float) or current is None:
            return float(value)
        if isinstance(current, str):
            if not isinstance(value, str):
                raise ValueError("expected a string")
            return value
        if isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ValueError("expected a list")
            if key == "task_size_sweep":
                return tuple((float(a), float(b)) for a, b in value)
            if key in ("hidden", "user_sweep"):
                return tuple(int(v) for v in value)
            if key == "sweep_schemes":
                return tuple(str(v) for v in value)
            return tuple(float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"cannot use {value!r}: {exc}") from None
    raise ConfigError(key, f"unsupported value {value!r}")


def _get(cfg: Any, path: tuple[str, ...]) -> Any:
    for name in path:
        cfg = getattr(cfg, name)
    return cfg


def _set(cfg: Any, path: tuple[str, ...], name: str, value: Any) -> Any:
    if not path:
        return replace(cfg, **{name: value})
    head, rest = path[0], path[1:]
    return replace(cfg, **{head: _set(getattr(cfg, head), rest, name, value)})


def apply_overrides(cfg: Config, overrides: dict[str, Any]) -> Config:
    for key, value in overrides.items():
        if key == "profile":
            continue
        if key not in KEYS:
            raise ConfigError(str(key), "unknown key")
        path, f = KEYS[key]
        current = getattr(_get(cfg, path), f.name)
        cfg = _set(cfg, path, f.name, _coerce(key, value, current))
    return cfg


def from_mapping(data: dict[str, Any]) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a flat key/value mapping")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(str(key), "nested sections are not allowed; use flat keys")
    profile = data.get("profile", "full")
    if profile not in PROFILES:
        raise ConfigError("profile", f"must be one of {', '.join(PROFILES)}")
    return apply_overrides(PROFILES[profile](), data).validate()


def load_config(path: str | Path) -> Config:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"not valid key/value syntax: {exc}") from None
    return from_mapping(data or {})


def to_mapping(cfg: Config) -> dict[str, Any]:
    """Flatten into the file schema, every key resolved."""
    out: dict[str, Any] = {"profile": cfg.profile}
    for key, (path, f) in KEYS.items():
        value = getattr(_get(cfg, path), f.name)
        if isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        out[key] = value
    return out


def dump_config(cfg: Config, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(to_mapping(cfg), sort_keys=False), encoding="utf-8")


def config_fingerprint(cfg: Config) -> str:
    return json.dumps(to_mapping(cfg), sort_keys=True)


def _positive(obj: Any, *names: str) -> None:
    for name in names:
        value = getattr(obj, name)
        if not (value > 0 and math.isfinite(value)):
            raise ConfigError(name, "must be positive and finite")


def _non_negative(obj: Any, *names: str) -> None:
    for name in names:
        value = getattr(obj, name)
        if not (value >= 0 and math.isfinite(value)):
            raise ConfigError(name, "must be non-negative and finite")

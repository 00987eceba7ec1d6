"""Command-line entry point: ``uavmec {train,eval,validate,sweep}``.

Every command resolves its configuration fully before touching the output
directory, so a bad config or missing file leaves nothing behind. All files a
command writes live under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import SCHEMES, SWEEP_AXES, Config, ConfigError, config_fingerprint, dump_config, load_config
from .experiments import AgentPool, sweep, write_rows
from .mdp import write_trajectory
from .neural import DomainError
from .training import CheckpointMismatch, MetricsWriter, evaluate, load_agent, save_agent, train
from .validate import SUITES, report, run_checks

log = logging.getLogger("uavmec")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

CONFIG_SNAPSHOT = "config.resolved.yaml"
METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.npz"
SUMMARY_FILE = "summary.json"
TRAJECTORY_FILE = "trajectory.jsonl"


class UsageError(Exception):
    pass


def _resolve(args: argparse.Namespace) -> Config:
    """Load the config file and fold command-line overrides into it."""
    cfg = load_config(args.config)
    run = cfg.run
    if getattr(args, "seed", None) is not None:
        run = replace(run, seed=args.seed)
    if getattr(args, "scheme", None) is not None:
        run = replace(run, scheme=args.scheme)
    if getattr(args, "episodes", None) is not None:
        run = replace(run, eval_episodes=args.episodes)
    if getattr(args, "steps", None) is not None:
        run = replace(run, total_steps=args.steps)
    if getattr(args, "out", None) is not None:
        run = replace(run, out_dir=str(args.out))
    return replace(cfg, run=run).validate()


def _out_dir(cfg: Config) -> Path:
    out = Path(cfg.run.out_dir)
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path {out} exists and is not a directory")
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / CONFIG_SNAPSHOT)
    writer = MetricsWriter(out / METRICS_FILE)
    try:
        result = train(cfg, on_episode=writer)
    finally:
        writer.close()
    save_agent(result.agent, out / CHECKPOINT_FILE, cfg, cfg.run.scheme)
    last = result.metrics[-1] if result.metrics else {}
    _write_json(out / SUMMARY_FILE, {
        "command": "train",
        "scheme": cfg.run.scheme,
        "seed": cfg.run.seed,
        "env_steps": result.env_steps,
        "critic_updates": result.critic_updates,
        "actor_updates": result.actor_updates,
        "episodes": len(result.metrics),
        "last_episode": last,
        "config_fingerprint": config_fingerprint(cfg),
    })
    log.info("trained %s for %d steps; outputs in %s", cfg.run.scheme, result.env_steps, out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    agent, meta = load_agent(ckpt, cfg)
    if meta.get("scheme") not in (None, cfg.run.scheme) and cfg.run.scheme in ("untreated", "conventional"):
        log.warning("evaluating scheme %s with a checkpoint trained as %s", cfg.run.scheme, meta.get("scheme"))
    out = _out_dir(cfg)
    res = evaluate(agent, cfg.world, cfg.run.scheme, cfg.run.eval_episodes, cfg.run.seed, record=True)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / CONFIG_SNAPSHOT)
    summary = res.summary()
    summary.update(command="eval", checkpoint=str(ckpt), seed=cfg.run.seed, sigma=cfg.world.layout.jitter_sigma)
    _write_json(out / SUMMARY_FILE, summary)
    write_trajectory(res.records, out / TRAJECTORY_FILE)
    print(f"{cfg.run.scheme}: energy {summary['energy_mean']:.6g} +/- {summary['energy_std']:.3g} J, "
          f"outage {summary['outage_mean']:.4f}, final battery {summary['final_battery_mean']:.6g} J")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    results = run_checks(seed=args.seed if args.seed is not None else 0, suites=args.suite)
    for r in results:
        print(r.line())
    rep = report(results)
    if args.out is not None:
        out = Path(args.out)
        if out.exists() and not out.is_dir():
            raise UsageError(f"output path {out} exists and is not a directory")
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "validate.json", rep)
    print("ALL CHECKS PASSED" if rep["passed"] else "SOME CHECKS FAILED")
    return EXIT_OK if rep["passed"] else EXIT_FAILED


def _parse_checkpoints(items: list[str] | None) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, path = item.partition("=")
        if not sep or key not in ("proposed", "untreated", "conventional"):
            raise UsageError(f"--checkpoint expects proposed|untreated|conventional=PATH, got {item!r}")
        if not Path(path).is_file():
            raise UsageError(f"checkpoint not found: {path}")
        out[key] = path
    return out


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    checkpoints = _parse_checkpoints(args.checkpoint)
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / CONFIG_SNAPSHOT)
    pool = AgentPool(cfg, cache_dir=out / "checkpoints", checkpoints=checkpoints)
    rows = sweep(pool, args.axis, cfg.run.eval_episodes, cfg.run.seed)
    path = out / f"sweep_{args.axis}.csv"
    write_rows(rows, path)
    for r in rows:
        print(f"{r['axis']}={r['value']:g} {r['scheme']}: energy {r['energy_mean']:.6g}, outage {r['outage_mean']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavmec", description="Jitter-robust UAV edge-computing simulator and REDQ trainer.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser, scheme: bool = True) -> None:
        sp.add_argument("--config", required=True, help="flat YAML config file")
        sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--out", help="output directory (default: out_dir from the config)")
        if scheme:
            sp.add_argument("--scheme", choices=SCHEMES, help="override the scheme")

    t = sub.add_parser("train", help="train an agent; writes checkpoint, metrics CSV, config snapshot")
    common(t)
    t.add_argument("--steps", type=int, help="override total environment steps")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint; writes summary JSON and trajectory JSONL")
    common(e)
    e.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    e.add_argument("--episodes", type=int, help="number of evaluation episodes")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("validate", help="run the built-in oracle suites")
    v.add_argument("--seed", type=int, help="seed for the randomized checks")
    v.add_argument("--suite", action="append", choices=list(SUITES), help="restrict to a suite (repeatable)")
    v.add_argument("--out", help="also write validate.json here")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("sweep", help="evaluate schemes along one axis; writes an aggregated CSV")
    common(s, scheme=False)
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--episodes", type=int, help="evaluation episodes per point")
    s.add_argument("--steps", type=int, help="training steps for agents the sweep has to train")
    s.add_argument("--checkpoint", action="append", metavar="KEY=PATH",
                   help="reuse a trained agent (KEY is proposed, untreated or conventional)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (UsageError, CheckpointMismatch, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

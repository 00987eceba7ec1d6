import json

import numpy as np
import pytest
import yaml

from uavmec.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, main
from uavmec.config import desk_profile
from uavmec.experiments import axis_points, read_rows
from uavmec.mdp import read_trajectory
from uavmec.training import evaluate

TINY = {
    "profile": "desk",
    "user_count": 2,
    "n_slots": 10,
    "warmup_steps": 20,
    "total_steps": 40,
    "batch_size": 16,
    "replay_capacity": 200,
    "hidden": [16, 16],
    "ensemble_size": 3,
    "utd_ratio": 2,
    "eval_episodes": 2,
    "sigma_sweep": [2.0, 0.5],
    "sweep_schemes": ["proposed", "random_move"],
}


def write_config(path, **extra):
    path.write_text(yaml.safe_dump({**TINY, **extra}))
    return path


def tree(root):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*"))


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("run")
    cfg = write_config(base / "tiny.yaml")
    out = base / "train"
    assert main(["train", "--config", str(cfg), "--seed", "5", "--out", str(out)]) == EXIT_OK
    return cfg, out


def test_train_outputs(trained_run):
    _, out = trained_run
    assert tree(out) == ["checkpoint.npz", "config.resolved.yaml", "metrics.csv", "summary.json"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["env_steps"] == 40 and summary["critic_updates"] == 40 and summary["actor_updates"] == 20
    snap = yaml.safe_load((out / "config.resolved.yaml").read_text())
    assert snap["seed"] == 5 and snap["user_count"] == 2


def test_train_twice_byte_identical(trained_run, tmp_path):
    cfg, out = trained_run
    again = tmp_path / "again"
    assert main(["train", "--config", str(cfg), "--seed", "5", "--out", str(again)]) == EXIT_OK
    assert (again / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()


def test_different_seed_differs(trained_run, tmp_path):
    cfg, out = trained_run
    other = tmp_path / "other"
    assert main(["train", "--config", str(cfg), "--seed", "6", "--out", str(other)]) == EXIT_OK
    assert (other / "metrics.csv").read_bytes() != (out / "metrics.csv").read_bytes()


def test_missing_config_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["train", "--config", str(tmp_path / "missing.yaml"), "--out", str(out)]) == EXIT_USAGE
    assert not out.exists()
    assert "not found" in capsys.readouterr().err


def test_unknown_key_named(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.yaml", lerning_rate=0.1)
    out = tmp_path / "out"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == EXIT_USAGE
    assert "lerning_rate" in capsys.readouterr().err
    assert not out.exists()


def test_eval_summary_matches_trajectory(trained_run, tmp_path):
    cfg, out = trained_run
    ev = tmp_path / "eval"
    args = ["eval", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.npz"),
            "--episodes", "3", "--seed", "2", "--out", str(ev)]
    assert main(args) == EXIT_OK
    assert tree(ev) == ["config.resolved.yaml", "summary.json", "trajectory.jsonl"]
    summary = json.loads((ev / "summary.json").read_text())
    records = read_trajectory(ev / "trajectory.jsonl")
    assert len(records) == 3 * TINY["n_slots"]
    rho = desk_profile().world.layout.rho_trj
    energies, outages = [], []
    for e in range(3):
        recs = [r for r in records if r["episode"] == e]
        energies.append(sum(sum(r["costs"]["e_lr"]) + sum(r["costs"]["e_off"]) for r in recs))
        outages.append(np.mean([r["prob_violation"] > rho for r in recs]))
    assert summary["energy_mean"] == pytest.approx(np.mean(energies), rel=1e-12)
    assert summary["outage_mean"] == pytest.approx(np.mean(outages), rel=1e-12)


def test_eval_dimension_mismatch(trained_run, tmp_path, capsys):
    _, out = trained_run
    cfg = write_config(tmp_path / "five.yaml", user_count=5)
    ev = tmp_path / "eval"
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.npz"), "--out", str(ev)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "2 users" in err and "5 users" in err
    assert not ev.exists()


def test_eval_missing_checkpoint(trained_run, tmp_path):
    cfg, _ = trained_run
    ev = tmp_path / "eval"
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "x.npz"), "--out", str(ev)]) == EXIT_USAGE
    assert not ev.exists()


def test_sweep_point_equals_eval(trained_run, tmp_path):
    cfg, out = trained_run
    sw = tmp_path / "sweep"
    ckpt = out / "checkpoint.npz"
    args = ["sweep", "--config", str(cfg), "--axis", "sigma", "--episodes", "2", "--seed", "3",
            "--checkpoint", f"proposed={ckpt}", "--out", str(sw)]
    assert main(args) == EXIT_OK
    rows = read_rows(sw / "sweep_sigma.csv")
    assert [r["value"] for r in rows] == [0.5, 0.5, 2.0, 2.0]
    ev = tmp_path / "eval"
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(ckpt), "--episodes", "2", "--seed", "3",
                 "--out", str(ev)]) == EXIT_OK
    # eval runs at the config's sigma (1.0); compare against a sweep over exactly that point
    one = write_config(tmp_path / "one.yaml", sigma_sweep=[1.0], sweep_schemes=["proposed"])
    sw1 = tmp_path / "sweep1"
    assert main(["sweep", "--config", str(one), "--axis", "sigma", "--episodes", "2", "--seed", "3",
                 "--checkpoint", f"proposed={ckpt}", "--out", str(sw1)]) == EXIT_OK
    row = read_rows(sw1 / "sweep_sigma.csv")[0]
    summary = json.loads((ev / "summary.json").read_text())
    assert row["energy_mean"] == pytest.approx(summary["energy_mean"], rel=1e-9)
    assert row["outage_mean"] == pytest.approx(summary["outage_mean"], rel=1e-9)


def test_sweep_bad_checkpoint_key(trained_run, tmp_path):
    cfg, out = trained_run
    sw = tmp_path / "sweep"
    args = ["sweep", "--config", str(cfg), "--axis", "sigma", "--checkpoint", f"random_move={out}/checkpoint.npz",
            "--out", str(sw)]
    assert main(args) == EXIT_USAGE
    assert not sw.exists()


def test_energy_grows_with_task_size():
    """Same uniform policy draws and task quantiles: larger data ranges cost more energy."""
    cfg = desk_profile()
    energies = [evaluate(None, w, "random_move", 2, seed=1, record=False).summary()["energy_mean"]
                for _, w in axis_points(cfg, "task_size")]
    assert all(a < b for a, b in zip(energies, energies[1:]))


def test_validate_exit_code(tmp_path, capsys):
    out = tmp_path / "val"
    assert main(["validate", "--suite", "physics", "--out", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "[PASS]" in printed and "ALL CHECKS PASSED" in printed
    assert json.loads((out / "validate.json").read_text())["passed"]


def test_validate_failure_exit_code(monkeypatch, capsys):
    import uavmec.validate as v

    monkeypatch.setitem(v.SUITES, "physics", lambda rng: [v.CheckResult("physics", "forced", False, "forced failure")])
    assert main(["validate", "--suite", "physics"]) == EXIT_FAILED
    assert "[FAIL]" in capsys.readouterr().out


def test_nothing_written_outside_out(trained_run, tmp_path, monkeypatch):
    cfg, out = trained_run
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    target = tmp_path / "only_here"
    assert main(["train", "--config", str(cfg), "--steps", "25", "--out", str(target)]) == EXIT_OK
    assert list(work.iterdir()) == []
    assert {p.name for p in tmp_path.iterdir()} == {"cwd", "only_here"}

import json
import time

import numpy as np
import pytest

from rtrrl import cli
from rtrrl.agent import Agent
from rtrrl.config import TrainConfig
from rtrrl.envs import make_env
from rtrrl.metrics import read_jsonl
from rtrrl.snapshot import load_snapshot, save_snapshot

SMALL = ["--train.max_steps", "3000", "--train.epoch_steps", "1000", "--train.eval_steps", "500",
         "--train.log_interval", "500"]


def _train(tmp_path, name, *args):
    out = tmp_path / name
    code = cli.main(["train", "--env", "memory_chain", "--env.length", "4", "--seed", "0",
                     "--out", str(out), *SMALL, *args])
    return code, out


def test_train_smoke(tmp_path, capsys):
    code, out = _train(tmp_path, "a")
    assert code == 0
    assert "best eval reward" in capsys.readouterr().out
    header, records = read_jsonl(out / "metrics.jsonl")
    assert any(r.eval_reward is not None for r in records)
    assert (out / "metrics.csv").exists() and (out / "final.snap").exists()
    assert header["config"]["env_params"] == {"length": 4}


def test_header_echoes_table_defaults(tmp_path):
    code, out = _train(tmp_path, "a", "--alg.mode", "rflo", "--alg.feedback", "fa")
    assert code == 0
    cfg = read_jsonl(out / "metrics.jsonl")[0]["config"]
    expected = {"hidden": 32, "gamma": 0.99, "lr_actor": 1e-4, "lr_critic": 1e-4, "lr_rnn": 1e-4,
                "eta_actor": 1.0, "eta_entropy": 1e-5, "lambda_actor": 0.9, "lambda_critic": 0.9,
                "lambda_rnn": 0.9, "dt": 1.0, "patience": 20, "clip": 1.0, "optimizer": "adam",
                "mode": "rflo", "feedback": "fa"}
    assert {k: cfg[k] for k in expected} == expected


def test_same_seed_byte_identical_logs(tmp_path):
    _, a = _train(tmp_path, "a")
    _, b = _train(tmp_path, "b")
    for name in ("metrics.jsonl", "metrics.csv", "final.snap"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_eval_zero_init_is_uniform(tmp_path, capsys):
    cfg = TrainConfig(env="memory_chain", env_params={"length": 4}, head_init=0.0, eval_steps=200)
    env = make_env(cfg.env, np.random.default_rng(0), **cfg.env_params)
    agent = Agent(cfg, env.spec)
    path = tmp_path / "zero.snap"
    save_snapshot(path, agent.state_dict(), {"config": cfg.to_dict()})
    assert cli.main(["eval", str(path)]) == 0
    out = capsys.readouterr().out
    assert "initial action distribution: [0.5000, 0.5000]" in out
    assert "mean eval reward" in out


def test_eval_corrupted_snapshot(tmp_path, capsys):
    code, out = _train(tmp_path, "a")
    blob = bytearray((out / "final.snap").read_bytes())
    blob[40] ^= 0x55
    bad = tmp_path / "bad.snap"
    bad.write_bytes(bytes(blob))
    assert cli.main(["eval", str(bad)]) == 1
    assert "checksum" in capsys.readouterr().err
    assert cli.main(["eval", str(tmp_path / "missing.snap")]) == 1


def test_eval_round_trips_trained_snapshot(tmp_path, capsys):
    _, out = _train(tmp_path, "a")
    tensors, meta = load_snapshot(out / "final.snap")
    assert meta["steps"] == 3000
    assert cli.main(["eval", str(out / "final.snap"), "--eval-steps", "100"]) == 0


def test_unknown_env_and_flag(capsys):
    assert cli.main(["train", "--env", "no_such_env"]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--alg.nope", "1"])
    assert exc.value.code == 2
    assert cli.main(["train", "--env", "memory_chain", "--env.bogus", "3"]) == 2


def test_verify_quick(capsys):
    t0 = time.perf_counter()
    assert cli.main(["verify", "--quick"]) == 0
    assert time.perf_counter() - t0 < 60
    out = capsys.readouterr().out
    assert "properties passed" in out and "failing" not in out


def test_verify_inject_names_failing_property(capsys):
    assert cli.main(["verify", "--quick", "--only", "rflo", "--inject", "rflo_tau"]) == 1
    out = capsys.readouterr().out
    assert "failing: rflo_tau" in out


def test_sweep(tmp_path, capsys):
    code = cli.main(["sweep", "--env", "bernoulli_bandit", "--seeds", "0", "1", "--out", str(tmp_path), *SMALL])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert len(summary["runs"]) == 2
    assert (tmp_path / "seed1" / "metrics.jsonl").exists()

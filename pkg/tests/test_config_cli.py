import json
import math
import socket
import subprocess
import sys
import threading

import numpy as np
import pytest

from twinsac import checkpoint
from twinsac.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_RUNTIME, main
from twinsac.config import Config, ConfigError
from twinsac.rewards import CaseId
from twinsac.trainer import METRICS_HEADER

TINY = {"sac": {"hidden": [8], "batch_size": 16, "warmup_steps": 50, "buffer_capacity": 1000},
        "env": {"max_episode_steps": {"1": 60, "2": 60, "3": 60}},
        "metrics_interval": 50}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def _metrics_file(tmp_path, rows):
    path = tmp_path / "m.csv"
    lines = [",".join(METRICS_HEADER)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


# config

def test_defaults_round_trip():
    cfg = Config()
    again = Config.from_dict(json.loads(cfg.canonical_json()))
    assert again == cfg and again.digest() == cfg.digest()
    assert len(cfg.digest()) == 32


def test_digest_tracks_content():
    assert Config.from_dict({"seed": 1}).digest() != Config().digest()
    assert Config.from_dict({"sac": {"hidden": [8]}}).sac.hidden == (8,)


@pytest.mark.parametrize(
    "data, where",
    [
        ({"bogus": 1}, "bogus"),
        ({"sac": {"momentum": 1}}, "sac.momentum"),
        ({"twin": {"port": 1}}, "twin.port"),
        ({"reward": {"7": {}}}, "reward.7"),
    ],
)
def test_unknown_keys_rejected(data, where):
    with pytest.raises(ConfigError, match=where):
        Config.from_dict(data)


@pytest.mark.parametrize("data", [{"seed": "x"}, {"metrics_interval": 0}, {"sac": {"batch_size": 1.5}}, []])
def test_bad_values_rejected(data):
    with pytest.raises(ConfigError):
        Config.from_dict(data)


def test_invalid_json():
    with pytest.raises(ConfigError):
        Config.loads("{")


def test_make_env_uses_step_cap():
    env = Config.from_dict(TINY).make_env(2)
    assert env.case_id is CaseId.CASE2 and env.spec.max_episode_steps == 60


# exit codes

def test_case3_with_init_rejected(tmp_path, capsys):
    code = main(["train", "--case", "3", "--init", "whatever.twfg", "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "without transfer learning" in capsys.readouterr().err


def test_unknown_case(tmp_path):
    assert main(["train", "--case", "4", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_config_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"sac": {"nope": 1}}')
    assert main(["train", "--case", "1", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_corrupt_checkpoint(tmp_path):
    p = tmp_path / "x.twfg"
    p.write_bytes(b"TWFG garbage")
    assert main(["eval", "--checkpoint", str(p)]) == EXIT_CHECKPOINT
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.twfg")]) == EXIT_CHECKPOINT


def test_zero_episodes(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "x"), "--episodes", "0"]) == EXIT_CONFIG


def test_follow_without_server():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    assert main(["twin-follow", "--connect", f"127.0.0.1:{port}", "--timeout", "1"]) == EXIT_RUNTIME


def test_serve_needs_one_source():
    assert main(["twin-serve"]) == EXIT_CONFIG


# train / eval / rollout

def test_train_eval_rollout(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    assert main(["train", "--case", "1", "--config", tiny_config, "--steps", "150", "--out", str(out), "--quiet"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["updates"] == 100
    ckpt = checkpoint.load(info["checkpoint"])
    assert ckpt.digest == Config.load(tiny_config).digest()
    assert (out / "metrics.csv").read_text().count("\n") == 4

    assert main(["eval", "--checkpoint", info["checkpoint"], "--config", tiny_config, "--episodes", "2"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["episodes"] == 2

    trace = tmp_path / "t.jsonl"
    assert main(["rollout", "--checkpoint", info["checkpoint"], "--config", tiny_config, "--out", str(trace)]) == 0
    assert json.loads(capsys.readouterr().out)["transitions"] == len(trace.read_text().splitlines())

    # transfer into case 2 is allowed, wrong shapes are a checkpoint error
    assert main(["train", "--case", "2", "--config", tiny_config, "--init", info["checkpoint"],
                 "--steps", "0", "--out", str(tmp_path / "tl"), "--quiet"]) == 0
    capsys.readouterr()
    assert main(["train", "--case", "2", "--init", info["checkpoint"], "--steps", "1",
                 "--out", str(tmp_path / "bad"), "--quiet"]) == EXIT_CHECKPOINT


def test_train_is_deterministic(tmp_path, tiny_config, capsys):
    blobs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--case", "2", "--config", tiny_config, "--seed", "4", "--steps", "200",
                     "--out", str(out), "--quiet"]) == 0
        blobs.append(((out / "metrics.csv").read_bytes(), (out / "checkpoint.twfg").read_bytes()))
    capsys.readouterr()
    assert blobs[0] == blobs[1]


# metrics

def test_metrics_passthrough_is_byte_identical(tmp_path, capsysbinary):
    path = _metrics_file(tmp_path, [[1000, 3, 1.5, 10, 0.1, -1, 0.2, 5.0], [2000, 6, 2.5, 12, 0.2, -2, 0.1, 4.0]])
    assert main(["metrics", str(path)]) == 0
    assert capsysbinary.readouterr().out == path.read_bytes()


def _normalized(tmp_path, capsys, rows):
    assert main(["metrics", str(_metrics_file(tmp_path, rows)), "--normalize-peak"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(METRICS_HEADER)
    return [[float(v) for v in ln.split(",")] for ln in lines[1:]]


def test_normalize_peak(tmp_path, capsys):
    rows = [[1000, 1, 1, 1, 1, 1, 1, 1], [2000, 2, 2, 2, 2, 2, 2, 2], [3000, 4, 4, 4, 4, 4, 4, 4]]
    out = _normalized(tmp_path, capsys, rows)
    assert [r[0] for r in out] == [1000, 2000, 3000] and [r[1] for r in out] == [1, 2, 4]
    for j in range(2, len(METRICS_HEADER)):
        assert [r[j] for r in out] == [25.0, 50.0, 100.0]


def test_normalize_zero_and_nan(tmp_path, capsys):
    rows = [[1000, 0, "nan", 0, "nan", 0, 0.2, "nan"], [2000, 0, 3, 0, 1, 0, 0.1, 2]]
    out = _normalized(tmp_path, capsys, rows)
    assert math.isnan(out[0][2]) and out[1][2] == 100.0
    assert [r[3] for r in out] == [0.0, 0.0]


@pytest.mark.parametrize(
    "text",
    ["step,episode\n1,2\n", ",".join(METRICS_HEADER) + "\n1,2,3\n", ",".join(METRICS_HEADER) + "\n" + ",".join("x" * 8) + "\n"],
)
def test_malformed_metrics(tmp_path, text):
    path = tmp_path / "m.csv"
    path.write_text(text)
    assert main(["metrics", str(path)]) == EXIT_CONFIG
    assert main(["metrics", str(path), "--normalize-peak"]) == EXIT_CONFIG


# twin link through the console entry point

def test_twin_serve_and_follow_processes(tmp_path):
    trace = tmp_path / "t.jsonl"
    assert main(["rollout", "--case", "2", "--out", str(trace), "--max-steps", "40", "--seed", "1"]) == 0
    serve = subprocess.Popen(
        [sys.executable, "-m", "twinsac.cli", "twin-serve", "--trace", str(trace), "--bind", "127.0.0.1:0", "--rate-hz", "200"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    try:
        line = serve.stderr.readline()
        assert line.startswith("listening on ")
        addr = line.split()[-1]
        follow = subprocess.run(
            [sys.executable, "-m", "twinsac.cli", "twin-follow", "--connect", addr],
            capture_output=True, text=True, timeout=60,
        )
        assert follow.returncode == 0, follow.stderr
        report = json.loads(follow.stdout)
        summary = json.loads(serve.communicate(timeout=60)[0])
    finally:
        serve.kill()
    assert report["frames_received"] == 40 and report["frames_dropped"] == 0
    assert report["end_effector_gap"] == 0.0
    assert summary["frames_sent"] == 40 and summary["acks_received"] == 40

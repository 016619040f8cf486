import csv
import json

import numpy as np
import pytest

from ar_a3c import cli
from ar_a3c import trainer as tr
from ar_a3c.checkpoint import load_checkpoint

TINY = ["--set", "actor_hidden=8", "--set", "critic_hidden=6", "--workers", "1"]
TINY_EVAL = ["--set", "actor_hidden=8", "--set", "critic_hidden=6"]


def rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture(autouse=True)
def _no_thread_override(monkeypatch):
    monkeypatch.delenv("AR_A3C_THREADS", raising=False)


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    for algo in ("a3c", "ar-a3c"):
        assert cli.main(["train", "--algo", algo, "--episodes", "2", "--out", str(root / algo), *TINY]) == 0
    return root


def test_train_outputs(runs):
    out = runs / "ar-a3c"
    curve = rows(out / "curve.csv")
    assert curve[0] == ["episode", "worker", "reward", "wallclock_s"]
    assert [r[0] for r in curve[1:]] == ["1", "2"]
    manifest = json.loads((out / "manifest-train.json").read_text())
    assert manifest["command"] == "train"
    assert set(manifest["outputs"]) == {"checkpoint", "curve"}
    assert manifest["config"]["actor_hidden"] == 8 and manifest["argv"][0] == "train"
    assert len(manifest["run_id"]) == 16
    assert (out / "curve.csv").read_bytes().endswith(b"\n")


def test_one_episode_a3c_keeps_initial_adversary(tmp_path):
    assert cli.main(["train", "--algo", "a3c", "--episodes", "1", "--out", str(tmp_path), *TINY]) == 0
    ckpt = load_checkpoint(tmp_path / "checkpoint.json")
    cfg = ckpt.config
    initial = tr.GlobalStore.initialize(cfg, tr.seed_streams(cfg.seed, 1)[0]).adversary
    for x, y in zip(initial.actor.arrays() + initial.critic.arrays(), ckpt.adversary.actor.arrays() + ckpt.adversary.critic.arrays()):
        assert np.array_equal(x, y)


def test_resume_continues_numbering(runs, tmp_path):
    ckpt = runs / "a3c" / "checkpoint.json"
    assert cli.main(["train", "--resume", str(ckpt), "--episodes", "2", "--out", str(tmp_path)]) == 0
    assert [r[0] for r in rows(tmp_path / "curve.csv")[1:]] == ["3", "4"]
    assert load_checkpoint(tmp_path / "checkpoint.json").episode_count == 4
    manifest = json.loads((tmp_path / "manifest-train.json").read_text())
    assert str(ckpt) in manifest["inputs"]


def test_same_seed_identical_outputs(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    for name in ("a", "b"):
        assert cli.main(["train", "--episodes", "2", "--seed", "5", "--out", str(tmp_path / name), *TINY]) == 0
    for f in ("curve.csv", "checkpoint.json", "manifest-train.json"):
        a, b = (tmp_path / "a" / f).read_bytes(), (tmp_path / "b" / f).read_bytes()
        if f.startswith("manifest"):
            a, b = a.replace(b"/a", b"/X"), b.replace(b"/b", b"/X")
            da, db = json.loads(a), json.loads(b)
            da.pop("run_id"), db.pop("run_id")
            assert da == db
        else:
            assert a == b


def test_exit_codes(tmp_path, runs):
    assert cli.main(["train", "--set", "lerning_rate=1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--algo", "ar-a3c", "--difficulty", "0", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text('{"format_version": 1, "con')
    assert cli.main(["show-checkpoint", str(bad)]) == cli.EXIT_CHECKPOINT
    assert cli.main(["show-checkpoint", str(tmp_path / "missing.json")]) == cli.EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    args = ["train", "--episodes", "1", "--out", str(blocker / "sub"), *TINY]
    assert cli.main(args) == cli.EXIT_IO
    # default network widths do not match the tiny checkpoint
    ckpt = str(runs / "a3c" / "checkpoint.json")
    assert cli.main(["eval", "--policy", ckpt, "--out", str(tmp_path)]) == cli.EXIT_CHECKPOINT


def test_divergence_exit_code(tmp_path, monkeypatch, capsys):
    from ar_a3c import agent as ac
    from ar_a3c.errors import DivergenceError

    def boom(*a, **k):
        raise DivergenceError("non-finite critic loss")

    monkeypatch.setattr(ac, "loss_grads", boom)
    assert cli.main(["train", "--episodes", "1", "--out", str(tmp_path), *TINY]) == cli.EXIT_DIVERGED
    assert "worker 0" in capsys.readouterr().err


def test_shape_error_names_dimensions(runs, tmp_path, capsys):
    ckpt = str(runs / "a3c" / "checkpoint.json")
    cli.main(["eval", "--policy", ckpt, "--out", str(tmp_path), "--set", "actor_hidden=5", "--set", "critic_hidden=6"])
    assert "actor hidden 8 ≠ 5" in capsys.readouterr().err


def test_attack_sweep_rows(runs, tmp_path):
    args = [
        "attack-sweep", "--policy", f"base={runs / 'a3c' / 'checkpoint.json'}", "--policy", str(runs / "ar-a3c" / "checkpoint.json"),
        "--magnitudes", "0,0.5,1.0,1.5,2.0", "--seeds", "0,1", "--episodes-per-seed", "1", "--out", str(tmp_path), *TINY_EVAL,
    ]
    assert cli.main(args) == 0
    summary = rows(tmp_path / "attack-sweep_summary.csv")
    assert summary[0] == ["policy", "sweep_value", "mean", "std", "n_episodes"]
    for name in ("base", "ar-a3c"):
        mine = [r for r in summary[1:] if r[0] == name]
        assert [float(r[1]) for r in mine] == [0.0, 0.5, 1.0, 1.5, 2.0]
        raw = rows(tmp_path / f"attack-sweep_{name}.csv")
        assert raw[0] == ["sweep_value", "seed", "episode", "reward"]
        assert len(raw) == 1 + 5 * 2
    manifest = json.loads((tmp_path / "manifest-attack-sweep.json").read_text())
    assert set(manifest["outputs"]) == {"base", "ar-a3c", "summary"}


def test_clog_sweep_axis(runs, tmp_path):
    args = [
        "clog-sweep", "--policy", str(runs / "a3c" / "checkpoint.json"), "--clogs", "0,0.074,0.148,0.221,0.295",
        "--seeds", "0", "--episodes-per-seed", "1", "--out", str(tmp_path), *TINY_EVAL,
    ]
    assert cli.main(args) == 0
    summary = rows(tmp_path / "clog-sweep_summary.csv")
    assert [float(r[1]) for r in summary[1:]] == [0.0, 0.074, 0.148, 0.221, 0.295]
    assert all(float(r[2]) <= 0 for r in summary[1:])


def test_impulse_trace_rows(runs, tmp_path, capsys):
    args = [
        "impulse", "--policy", str(runs / "a3c" / "checkpoint.json"), "--at", "300", "--duration", "5",
        "--torque", "10", "--steps", "1000", "--out", str(tmp_path), *TINY_EVAL,
    ]
    assert cli.main(args) == 0
    trace = rows(tmp_path / "impulse_a3c.csv")
    assert trace[0] == ["t", "theta", "theta_dot", "a_mu", "a_nu", "r"]
    assert len(trace) == 1001
    assert [int(r[0]) for r in trace[1:]] == list(range(1000))
    assert "recovery" in capsys.readouterr().out


def test_trace_uses_trained_adversary(runs, tmp_path):
    ar = str(runs / "ar-a3c" / "checkpoint.json")
    assert cli.main(["trace", "--policy", ar, "--steps", "50", "--out", str(tmp_path), *TINY_EVAL]) == 0
    trace = rows(tmp_path / "trace_ar-a3c.csv")
    assert len(trace) == 51
    a_nu = [float(r[4]) for r in trace[1:]]
    assert any(a != 0.0 for a in a_nu) and max(abs(a) for a in a_nu) <= 1.0
    a3c = str(runs / "a3c" / "checkpoint.json")
    assert cli.main(["trace", "--policy", a3c, "--steps", "5", "--out", str(tmp_path), *TINY_EVAL]) == cli.EXIT_CONFIG
    assert cli.main(["trace", "--policy", a3c, "--kind", "none", "--steps", "5", "--out", str(tmp_path), *TINY_EVAL]) == 0


def test_threads_env_overrides_workers(monkeypatch, tmp_path):
    monkeypatch.setenv("AR_A3C_THREADS", "3")
    args = cli.build_parser().parse_args(["train", "--workers", "1"])
    assert cli.effective_config(args).workers == 3
    assert cli.main(["train", "--episodes", "3", "--out", str(tmp_path), *TINY]) == 0
    assert load_checkpoint(tmp_path / "checkpoint.json").config.workers == 3
    worker_ids = {r[1] for r in rows(tmp_path / "curve.csv")[1:]}
    assert worker_ids <= {"0", "1", "2"}


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"episodes": 9, "gamma": 0.95, "seed": 4}))
    args = cli.build_parser().parse_args(["train", "--config", str(cfg), "--seed", "6", "--set", "gamma=0.8"])
    config = cli.effective_config(args)
    assert (config.episodes, config.gamma, config.seed) == (9, 0.8, 6)


def test_show_checkpoint(runs, capsys):
    assert cli.main(["show-checkpoint", str(runs / "ar-a3c" / "checkpoint.json")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["algo"] == "ar_a3c" and info["protagonist"]["actor"] == [3, 8, 2]


def test_csv_floats_round_trip():
    text = cli.csv_text([("x",), (0.1 + 0.2,), (1e-300,)])
    assert [float(v) for v in text.splitlines()[1:]] == [0.1 + 0.2, 1e-300]

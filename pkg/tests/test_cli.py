import json
from pathlib import Path

import pytest

from pfedrl.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main

CONFIG = """
env = garnet
agents = 2
d = 3
K = 4
T = 20
gamma = 0.9
alpha0 = 1.0
beta0 = 2.0
variant = pfedtd-rep
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "g.cfg"
    path.write_text(CONFIG)
    return path


def _summary(out):
    return json.loads((Path(out) / "summary.json").read_text())


def test_run(cfg, tmp_path, capsys):
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "4"]) == EXIT_OK
    assert _summary(tmp_path / "o")["seed"] == 4
    assert "metrics.csv" in capsys.readouterr().out


def test_env_overrides(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("PFEDRL_SEED", "9")
    monkeypatch.setenv("PFEDRL_OUT", str(tmp_path / "env"))
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    assert _summary(tmp_path / "env")["seed"] == 9


def test_flag_beats_env(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("PFEDRL_SEED", "9")
    assert main(["run", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "f")]) == EXIT_OK
    assert _summary(tmp_path / "f")["seed"] == 2


def test_bad_env_seed(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("PFEDRL_SEED", "abc")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_validation_exit(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(CONFIG.replace("gamma = 0.9\n", ""))
    assert main(["run", "--config", str(bad)]) == EXIT_VALIDATION
    assert "gamma" in capsys.readouterr().err


def test_usage_error_exit():
    assert main(["run"]) == EXIT_VALIDATION
    assert main(["sweep", "--config", "x", "--agents", "2,a", "--threshold", "1"]) == EXIT_VALIDATION


def test_runtime_exit(tmp_path, capsys):
    # a regular file where the output directory should go makes mkdir fail at run time
    path = tmp_path / "g.cfg"
    path.write_text(CONFIG)
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["run", "--config", str(path), "--out", str(blocker / "sub")]) == EXIT_RUNTIME
    assert "error" in capsys.readouterr().err


def test_sweep(cfg, tmp_path, capsys):
    code = main(["sweep", "--config", str(cfg), "--agents", "1,2", "--threshold", "0.5", "--seeds", "2",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    table = json.loads((tmp_path / "sweep.json").read_text())
    assert [row["agents"] for row in table] == [1, 2]
    assert "speedup" in capsys.readouterr().out


def test_check(capsys):
    assert main(["check", "--only", "mixing", "--only", "gradients"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 2

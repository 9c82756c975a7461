import json
import subprocess
import sys

import pytest

from photonic_ppo import cli, harness
from photonic_ppo.exceptions import GateDomainError


def test_gates_selftest(capsys):
    assert cli.main(["gates-selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 10


def test_train_and_replay(tmp_path, capsys):
    out = tmp_path / "run"
    code = cli.main(["train", "--policy", "classical", "--episodes", "4", "--agents", "2", "--seed-base", "7",
                     "--out", str(out), "--hp.lr_policy=0.02", "--hp.minibatch", "4"])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [7, 8]
    assert manifest["config"]["hp"]["lr_policy"] == 0.02 and manifest["config"]["hp"]["minibatch"] == 4
    assert (out / "agents" / "agent_8.csv").exists()
    assert cli.main(["replay", "--manifest", str(out / "manifest.json"), "--out", str(tmp_path / "re")]) == 0
    assert "replay identical" in capsys.readouterr().out


def test_config_file(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(f"policy_kind = classical\nepisodes = 2\nnum_agents = 1\noutput_dir = {tmp_path / 'o'}\n")
    assert cli.main(["train", "--config", str(cfg)]) == 0
    assert (tmp_path / "o" / "aggregate.csv").exists()


@pytest.mark.parametrize("argv", [
    ["train", "--bogus"],
    ["train", "--hp.nope=1"],
    ["train", "--hp.gamma=abc"],
    ["train", "--policy", "transformer"],
    ["train", "--episodes", "0"],
    ["replay", "--manifest", "/nonexistent/manifest.json"],
    ["gates-selftest", "--hp.gamma=0.5"],
    [],
])
def test_config_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_exit_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("episodes = 3\nlearning_speed = fast\n")
    assert cli.main(["train", "--config", str(cfg)]) == 2


def test_numerical_abort_exit_3(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise GateDomainError("squeezing magnitude 2.0 exceeds the safety limit 1.5.")

    monkeypatch.setattr(harness, "update", boom)
    assert cli.main(["train", "--policy", "classical", "--episodes", "2", "--agents", "1", "--out", str(tmp_path)]) == 3


def test_split_overrides():
    rest, hp = cli.split_hp_overrides(["train", "--hp.gamma=0.9", "--hp.tau", "2", "--episodes", "3"])
    assert rest == ["train", "--episodes", "3"] and hp == {"gamma": "0.9", "tau": "2"}


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "photonic_ppo", "gates-selftest"], capture_output=True, text=True)
    assert proc.returncode == 0 and "PASS" in proc.stdout

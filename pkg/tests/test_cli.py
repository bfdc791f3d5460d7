import csv
import json
import os

import pytest

from diracip.cli import build_parser, main
from diracip.config import EXPERIMENTS, resolve


def test_parser_has_every_subcommand_and_flag():
    p = build_parser()
    for name in EXPERIMENTS:
        a = p.parse_args([name, "--config", "c.toml", "--out", "o", "--threads", "2", "--seed", "4", "--no-plots"])
        assert (a.command, a.config, a.out, a.threads, a.seed, a.no_plots) == (name, "c.toml", "o", 2, 4, True)
    with pytest.raises(SystemExit):
        p.parse_args(["not-a-command"])


def test_pass_writes_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["algebra-selftest", "--out", str(out), "--threads", "1"]) == 0
    h = resolve(None, "algebra-selftest").hash
    rows = list(csv.DictReader(open(out / "algebra-selftest.csv")))
    assert len(rows) == 6 and all(r["config_hash"] == h for r in rows)
    doc = json.load(open(out / "algebra-selftest.json"))
    assert doc["config_hash"] == h and doc["pass"] is True and doc["experiment"] == "algebra-selftest"
    assert "pass" in capsys.readouterr().out


def test_failing_threshold_exits_one(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[experiments.algebra-selftest]\ntolerance = 0.0\nsamples = 50\n")
    assert main(["algebra-selftest", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert json.load(open(tmp_path / "algebra-selftest.json"))["pass"] is False


def test_bad_config_exits_two(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[weights]\nalpha = 3.0\n")
    assert main(["phase-check", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    err = json.load(open(tmp_path / "phase-check.error.json"))
    assert err["pass"] is False and err["error"]["type"] == "config"
    assert "alpha" in capsys.readouterr().err
    assert not os.path.exists(tmp_path / "phase-check.csv")
    assert main(["phase-check", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path)]) == 2


def test_precondition_failure_exits_two(tmp_path):
    # a pole inside the domain hull is rejected by the experiment, not by the config
    cfg = tmp_path / "c.toml"
    cfg.write_text("[phase]\nx0 = [0.0, 0.0, 2.0]\n")
    assert main(["phase-check", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    err = json.load(open(tmp_path / "phase-check.error.json"))["error"]
    assert err["type"] == "precondition" and err["class"] == "DomainError"


def test_plots_and_determinism(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[experiments.phase-check]\nresolutions = [9, 17]\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["phase-check", "--config", str(cfg), "--out", str(a)]) in (0, 1)
    assert main(["phase-check", "--config", str(cfg), "--out", str(b), "--no-plots"]) in (0, 1)
    svgs = [f for f in os.listdir(a) if f.endswith(".svg")]
    assert svgs and not [f for f in os.listdir(b) if f.endswith(".svg")]
    for f in ("phase-check.csv", "phase-check.json"):
        assert open(a / f).read() == open(b / f).read()

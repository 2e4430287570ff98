from __future__ import annotations

import json
import shutil
import subprocess
import sys

import pytest

from polarsim.cli import EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, EXIT_RUNTIME, main

WORLD = """\
version = 1
user_count = 300
posting_rate = 0.3
repost_prob = 0.5

[topic_mix]
a = 0.5
b = 0.5

[topics.a]
regime = "broadcast"
hub_exponent = 2.3
target_reciprocity = 0.2

[topics.b]
regime = "mutual"
out_degree = 4
target_reciprocity = 0.6
"""

EXPERIMENT = """\
version = 1
world = "world.toml"
seeds = {seeds}
bots_per_arm = 2
t_max = 60.0
warmup = 5.0
follow_cap = 12
seed_pool_min = 20

[[arms]]
name = "arm1"
preference = "a"

[[arms]]
name = "arm2"
preference = "b"
"""


def write_configs(d, seeds="[3]"):
    (d / "world.toml").write_text(WORLD)
    (d / "exp.toml").write_text(EXPERIMENT.format(seeds=seeds))
    return d / "exp.toml"


@pytest.fixture(scope="module")
def single_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = write_configs(d)
    assert main(["run", str(cfg), "-o", str(d / "out"), "--quiet"]) == EXIT_OK
    return d / "out"


def test_run_writes_a_manifest(single_run):
    manifest = json.loads((single_run / "manifest.json").read_text())
    assert "fig3_pcr.csv" in manifest["files"] and "events.jsonl" in manifest["files"]


def test_analyze_reproduces(single_run, capsys):
    assert main(["analyze", str(single_run)]) == EXIT_OK
    assert "reproduced exactly" in capsys.readouterr().out


def test_tampered_report_is_a_mismatch(single_run, tmp_path, capsys):
    d = tmp_path / "copy"
    shutil.copytree(single_run, d)
    (d / "tests.csv").write_text("tampered\n")
    assert main(["analyze", str(d)]) == EXIT_MISMATCH
    assert "tests.csv" in capsys.readouterr().err


def test_report_restores_a_tampered_file(single_run, tmp_path):
    d = tmp_path / "copy"
    shutil.copytree(single_run, d)
    (d / "tests.csv").write_text("tampered\n")
    assert main(["report", str(d), "--quiet"]) == EXIT_OK
    assert (d / "tests.csv").read_bytes() == (single_run / "tests.csv").read_bytes()
    assert main(["analyze", str(d)]) == EXIT_OK


def test_missing_log_is_a_runtime_error(single_run, tmp_path, capsys):
    d = tmp_path / "copy"
    shutil.copytree(single_run, d)
    (d / "events.jsonl").unlink()
    assert main(["analyze", str(d)]) == EXIT_RUNTIME
    assert "events.jsonl" in capsys.readouterr().err


def test_not_a_run_directory(tmp_path):
    assert main(["analyze", str(tmp_path)]) == EXIT_RUNTIME


def test_config_and_usage_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.toml"), "-o", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main([]) == EXIT_CONFIG
    assert main(["run", "x.toml"]) == EXIT_CONFIG  # no -o
    cfg = write_configs(tmp_path)
    cfg.write_text(cfg.read_text().replace("bots_per_arm = 2", "bots_per_arm = 1"))
    assert main(["run", str(cfg), "-o", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "bots_per_arm" in capsys.readouterr().err


def test_seed_override_and_replicate_sets(tmp_path):
    cfg = write_configs(tmp_path, seeds="[3, 4]")
    assert main(["run", str(cfg), "-o", str(tmp_path / "set"), "--quiet"]) == EXIT_OK
    assert (tmp_path / "set/seed-3/fig3_pcr.csv").is_file() and (tmp_path / "set/seed-4").is_dir()
    rows = (tmp_path / "set/replicates.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["3", "4", "mean"]
    assert main(["analyze", str(tmp_path / "set")]) == EXIT_OK
    assert main(["run", str(cfg), "-o", str(tmp_path / "one"), "--seed", "4", "--quiet"]) == EXIT_OK
    assert (tmp_path / "one/fig3_pcr.csv").read_bytes() == (tmp_path / "set/seed-4/fig3_pcr.csv").read_bytes()


def test_genworld(tmp_path, capsys):
    (tmp_path / "world.toml").write_text(WORLD)
    args = ["genworld", str(tmp_path / "world.toml"), "-o"]
    assert main(args + [str(tmp_path / "w1"), "--seed", "9"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "validation" in out and "a: " in out and "b: " in out
    assert main(args + [str(tmp_path / "w2"), "--seed", "9", "--quiet"]) == EXIT_OK
    assert capsys.readouterr().out == ""
    assert main(args + [str(tmp_path / "w3"), "--seed", "10", "--quiet"]) == EXIT_OK
    edges = [(tmp_path / w / "follows.edges").read_bytes() for w in ("w1", "w2", "w3")]
    assert edges[0] == edges[1] != edges[2]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "polarsim", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "genworld" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "polarsim", "bogus"], capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG

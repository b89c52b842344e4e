import json
import subprocess
import sys

import pytest

from coalition_lab import config as cfgmod
from coalition_lab.cli import main

TINY = ["--set", "maddpg.batch_size=32", "--set", "io.demo_episodes=2", "--episodes", "3"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    assert main(["train", "--phase", "ugv", "--seed", "7", "--out", str(root)] + TINY) == 0
    assert main(["train", "--phase", "uav", "--seed", "7", "--out", str(root)] + TINY) == 0
    return root


def test_train_layout(trained):
    ugv = trained / "ugv"
    for name in ("curve.csv", "manifest.json", "config.cfg", "demo_tracks.csv", "policy/policy.json",
                 "policy/actor_0.ckpt"):
        assert (ugv / name).exists(), name
    manifest = json.loads((ugv / "manifest.json").read_text())
    assert manifest["seed"] == 7 and len(manifest["config_hash"]) == 16
    assert {"checkpoint", "policy", "csv"} <= set(manifest["format_versions"])
    assert "git_describe" in manifest
    assert cfgmod.config_hash(cfgmod.load(ugv / "config.cfg")) == manifest["config_hash"]
    assert (ugv / "curve.csv").read_text().splitlines()[0].startswith("episode,return,r1")
    assert len((ugv / "curve.csv").read_text().splitlines()) == 4
    assert (trained / "uav" / "policy" / "actor_1.ckpt").exists()


def test_train_is_byte_identical(trained, tmp_path):
    assert main(["train", "--phase", "ugv", "--seed", "7", "--out", str(tmp_path)] + TINY) == 0
    for name in ("curve.csv", "demo_tracks.csv"):
        assert (tmp_path / "ugv" / name).read_bytes() == (trained / "ugv" / name).read_bytes()


def test_uav_phase_without_ugv_errors(tmp_path, capsys):
    assert main(["train", "--phase", "uav", "--out", str(tmp_path)] + TINY) != 0
    assert "train --phase ugv" in capsys.readouterr().err


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("COALITION_LAB_OUT", str(tmp_path))
    pts = tmp_path / "p.csv"
    pts.write_text("0,0\n")
    assert main(["zone", str(pts), "--no-plots"]) == 0
    assert (tmp_path / "zones" / "centers.csv").exists()


def test_evaluate_outputs_and_determinism(trained, tmp_path):
    args = ["evaluate", "--policy", str(trained / "ugv" / "policy"), "--episodes", "3", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("episodes.csv", "curve.csv", "metrics.csv"):
        a = (tmp_path / "a" / "eval_ugv" / name).read_bytes()
        assert a == (tmp_path / "b" / "eval_ugv" / name).read_bytes()
    assert len((tmp_path / "a" / "eval_ugv" / "episodes.csv").read_text().splitlines()) == 4


def test_evaluate_layout_mismatch_names_both_shapes(trained, tmp_path, capsys):
    rc = main(["evaluate", "--policy", str(trained / "ugv" / "policy"), "--episodes", "1",
               "--set", "world.n_ground_target=4", "--out", str(tmp_path)])
    assert rc != 0
    err = capsys.readouterr().err
    assert "n_targets=2" in err and "n_targets=4" in err


# -- zone --------------------------------------------------------------------------------

def test_zone_empty_file(tmp_path):
    pts = tmp_path / "empty.csv"
    pts.write_text("")
    assert main(["zone", str(pts), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "zones" / "centers.csv").read_text() == "zone,x,y,size\n"


def test_zone_malformed_row_names_line(tmp_path, capsys):
    pts = tmp_path / "bad.csv"
    pts.write_text("0,0\n1,1\na,b\n")
    assert main(["zone", str(pts), "--out", str(tmp_path)]) != 0
    assert "bad.csv:3" in capsys.readouterr().err


def test_zone_clustered_points_pass_coverage(tmp_path):
    pts = tmp_path / "pts.csv"
    rows = [(100 + i, 50 - i) for i in range(5)] + [(-400 + 2 * i, 10.0) for i in range(5)]
    pts.write_text("x,y\n" + "".join(f"{x},{y}\n" for x, y in rows))
    assert main(["zone", str(pts), "--out", str(tmp_path)]) == 0
    out = tmp_path / "zones"
    assert "coverage_ok = True" in (out / "coverage.txt").read_text()
    assert len((out / "centers.csv").read_text().splitlines()) == 3
    assert len((out / "membership.csv").read_text().splitlines()) == 11
    assert (out / "zones.svg").exists()


# -- mission and report -------------------------------------------------------------------

def mission_args(trained, out, *extra):
    return ["mission", "--ugv-policy", str(trained / "ugv" / "policy"),
            "--uav-policy", str(trained / "uav" / "policy"), "--out", str(out), *extra]


def test_mission_four_episodes(trained, tmp_path):
    assert main(mission_args(trained, tmp_path, "--episodes", "4", "--targets", "4",
                             "--coalition", "1x2", "--seed", "2")) == 0
    lines = (tmp_path / "mission_maddpg" / "episodes.csv").read_text().splitlines()
    assert lines[0].startswith("config,episode,phi") and len(lines) == 5
    assert (tmp_path / "mission_maddpg" / "manifest.json").exists()


def test_mission_no_zoning_uses_one_zone(trained, tmp_path):
    assert main(mission_args(trained, tmp_path, "--episodes", "1", "--mode", "no-zoning")) == 0
    traces = sorted(p.name for p in (tmp_path / "mission_maddpg").glob("trace_zone*.svg"))
    assert traces == ["trace_zone0.svg"]


def test_mission_without_models_errors(tmp_path, capsys):
    assert main(["mission", "--episodes", "1", "--out", str(tmp_path)]) != 0
    assert "no UGV model" in capsys.readouterr().err


def test_report_merges_runs(trained, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(mission_args(trained, a, "--episodes", "2", "--method", "zoned", "--no-plots")) == 0
    assert main(mission_args(trained, b, "--episodes", "2", "--method", "nozone", "--mode", "no-zoning",
                             "--no-plots")) == 0
    assert main(["report", str(a / "mission_zoned"), str(b / "mission_nozone"), "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "report" / "comparison.csv").read_text().splitlines()
    assert rows[0] == "method,config,metric,value"
    keys = [tuple(r.split(",")[:3:2]) for r in rows[1:]]
    assert len(keys) == len(set(keys)) == 12
    assert (tmp_path / "report" / "accuracy.svg").exists()


def test_report_missing_run(tmp_path):
    assert main(["report", str(tmp_path / "nothing"), "--out", str(tmp_path)]) != 0


def test_console_entry_point_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "coalition_lab.cli", "--help"], capture_output=True)
    assert ok.returncode == 0
    bad = subprocess.run([sys.executable, "-m", "coalition_lab.cli", "zone", str(tmp_path / "missing.csv")],
                         capture_output=True, text=True, cwd=tmp_path)
    assert bad.returncode != 0 and "error:" in bad.stderr

"""Tests for the command line front end."""

import csv
import json
import subprocess
import sys

import pytest

from tilescope import cli

PIPELINE_SMALL = ["--set", "size=512", "--set", "length=8.0", "--set", "spatial=[0,4]", "--set", "tile_scales=[-2,0]"]


def run(argv, capsys):
    code = cli.main(argv)
    return code, capsys.readouterr()


class TestRegion:
    def test_good_tuple_exits_zero(self, capsys):
        code, out = run(["region", "--alpha", "1/2,1/2,0"], capsys)
        data = json.loads(out.out)
        assert code == 0
        assert data["constants"]["classification"] == "good"
        assert data["flags"]["paths_agree"]

    def test_forbidden_tuple_exits_one(self, capsys):
        code, out = run(["region", "--alpha", "3/4,3/4,-1/2"], capsys)
        assert code == 1
        assert json.loads(out.out)["constants"]["region_member"] is False

    def test_bad_tuple_reports_theta(self, capsys):
        code, out = run(["region", "--alpha", "2/3,2/3,-1/3"], capsys)
        data = json.loads(out.out)
        assert code == 0 and data["constants"]["classification"] == "bad(3)"
        assert data["constants"]["theta"] == ["1/3", "1/3", "1/3"]


class TestBhtCheck:
    def test_json_keys(self, capsys, tmp_path):
        out = tmp_path / "r.json"
        code, _ = run(["bht-check", "--M", "2048", "--trials", "5", "--out", str(out)], capsys)
        data = json.loads(out.read_text())
        for key in ("max_rel_err_spectral_vs_pv", "duality_err", "runtime_ms"):
            assert key in data["constants"]
        assert code == (0 if data["passed"] else 1)
        assert code == 0


class TestExperimentCommands:
    def test_rwt_forbidden_exits_two(self, capsys):
        code, out = run(["rwt-sweep", "--alpha", "3/4,3/4,-1/2", "--set", "size=1024"], capsys)
        assert code == 2
        assert "RegionViolation" in out.err

    def test_rwt_config_file_and_csv(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"size": 1024, "trials": 2}))
        series = tmp_path / "s.csv"
        code, out = run(["rwt-sweep", "--config", str(cfg), "--octaves", "2", "--csv", str(series)], capsys)
        data = json.loads(out.out)
        assert code == 0
        assert data["config"]["size"] == 1024 and data["config"]["octaves"] == 2
        rows = list(csv.reader(open(series)))
        assert rows[0] == ["scale_octave", "ratio", "bucket"] and len(rows) == 3

    def test_pipeline_octaves(self, capsys):
        code, out = run(["pipeline", *PIPELINE_SMALL, "--octave-count", "2"], capsys)
        data = json.loads(out.out)
        assert code == 0
        assert len(data["constants"]["max_bucket_ratio_by_octave"]) == 2

    def test_unknown_key(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["rwt-sweep", "--set", "nope=1"])
        assert exc.value.code == 2

    def test_unknown_option_for_check(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["whitney-check", "--set", "nope=1"])
        assert exc.value.code == 2

    def test_malformed_set(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["region", "--alpha", "1/2,1/2,0", "--set", "novalue"])
        assert exc.value.code == 2

    def test_tree_demo_trace_on_stderr(self, capsys):
        code, out = run(["tree-demo", "--m", "3"], capsys)
        assert code == 0
        assert "top=" in out.err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tilescope.cli", "region", "--alpha", "1/2,1/2,0"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["passed"] is True

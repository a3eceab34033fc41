import json
import subprocess
import sys

import pytest

from histmerge import fixture_path
from histmerge.cli import main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"dim": 4, "steps": 4, "record_capacity": 1, "seed": 3}))
    return path


class TestVerify:
    def test_ok(self, capsys):
        code, out, _ = run(["verify", "--suite", "gl", "--instances", "5", "--dims", "2,3"], capsys)
        assert code == 0
        summary = json.loads(out)
        assert summary["violations"] == 0
        assert summary["dims"] == [2, 3]

    def test_violation_exit(self, capsys):
        # A negative tolerance turns exact equalities into violations.
        code, out, _ = run(["verify", "--suite", "merge", "--instances", "5", "--dims", "2",
                            "--tolerance", "-1"], capsys)
        assert code == 3
        assert json.loads(out)["violations"] > 0

    @pytest.mark.parametrize("argv", [
        ["verify", "--suite", "nope"],
        ["verify", "--instances", "0"],
        ["verify", "--dims", "1,2"],
        ["verify", "--dims", "a"],
        ["frobnicate"],
        [],
    ])
    def test_usage_errors(self, argv, capsys):
        assert run(argv, capsys)[0] == 2

    def test_out_file(self, tmp_path, capsys):
        out = tmp_path / "v.json"
        code, stdout, _ = run(["verify", "--suite", "qubit", "--instances", "3", "--out", str(out)], capsys)
        assert code == 0 and stdout == ""
        assert json.loads(out.read_text())["suite"] == "qubit"

    def test_env_seed(self, monkeypatch, capsys):
        monkeypatch.setenv("HISTMERGE_SEED", "17")
        _, out, _ = run(["verify", "--suite", "gl", "--instances", "2", "--dims", "2"], capsys)
        assert json.loads(out)["seed"] == 17
        _, out, _ = run(["verify", "--suite", "gl", "--instances", "2", "--dims", "2", "--seed", "4"], capsys)
        assert json.loads(out)["seed"] == 4

    def test_bad_env_seed(self, monkeypatch, capsys):
        monkeypatch.setenv("HISTMERGE_SEED", "x")
        code, _, err = run(["verify", "--instances", "1"], capsys)
        assert code == 1
        assert "HISTMERGE_SEED" in err


class TestFamily:
    def test_consistent_fixture(self, capsys):
        code, out, _ = run(["family", "--spec", str(fixture_path("consistent_fixture.json"))], capsys)
        assert code == 0
        assert json.loads(out)["consistent"] is True

    def test_double_slit(self, capsys):
        code, out, err = run(["family", "--spec", str(fixture_path("double_slit.json"))], capsys)
        assert code == 3
        report = json.loads(out)
        assert report["worst_residual"] == pytest.approx(0.25, abs=1e-10)
        assert "inconsistent" in err

    def test_probabilities(self, capsys):
        code, out, _ = run(["family", "--spec", str(fixture_path("double_slit.json")),
                            "--action", "probabilities"], capsys)
        assert code == 0
        obj = json.loads(out)
        assert [r["probability"] for r in obj["chains"]] == pytest.approx([0.25] * 4)
        assert obj["total"] == pytest.approx(1.0)

    def test_decoherence(self, capsys):
        code, out, _ = run(["family", "--spec", str(fixture_path("double_slit.json")),
                            "--action", "decoherence"], capsys)
        assert code == 0
        obj = json.loads(out)
        assert len(obj["re"]) == 4 and len(obj["im"][0]) == 4
        assert obj["re"][0][2] == pytest.approx(0.25)

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["family", "--spec", str(tmp_path / "none.json")], capsys)
        assert code == 1
        assert "none.json" in err

    def test_schema_error(self, tmp_path, capsys):
        bad = json.loads(fixture_path("double_slit.json").read_text())
        bad["slots"][1]["time"] = "late"
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        code, _, err = run(["family", "--spec", str(path)], capsys)
        assert code == 1
        assert "slots[1].time" in err


class TestSimulate:
    def test_single(self, tmp_path, config_file, capsys):
        out = tmp_path / "traj.csv"
        code, _, _ = run(["simulate", "--config", str(config_file), "--out", str(out)], capsys)
        assert code == 0
        assert out.read_text().startswith("step,time,event,entropy,probability,bundle_size,ledger_occupancy\n")
        summary = json.loads((tmp_path / "traj.summary.json").read_text())
        assert summary["seeds"] == [3]
        assert summary["outputs"] == ["traj.csv"]

    def test_trials_and_jobs_agree(self, tmp_path, config_file, capsys):
        a, b = tmp_path / "a" / "t.csv", tmp_path / "b" / "t.csv"
        a.parent.mkdir()
        b.parent.mkdir()
        run(["simulate", "--config", str(config_file), "--out", str(a), "--trials", "3", "--jobs", "1"], capsys)
        run(["simulate", "--config", str(config_file), "--out", str(b), "--trials", "3", "--jobs", "2"], capsys)
        for k in range(3):
            name = f"t_trial{k:03d}.csv"
            assert (a.parent / name).read_bytes() == (b.parent / name).read_bytes()
        assert (a.parent / "t.summary.json").read_bytes() == (b.parent / "t.summary.json").read_bytes()
        summary = json.loads((a.parent / "t.summary.json").read_text())
        assert summary["seeds"] == [3, 4, 5]
        assert summary["summary"]["trials"] == 3

    def test_seed_precedence(self, tmp_path, config_file, monkeypatch, capsys):
        monkeypatch.setenv("HISTMERGE_SEED", "11")
        out = tmp_path / "e.csv"
        run(["simulate", "--config", str(config_file), "--out", str(out)], capsys)
        assert json.loads((tmp_path / "e.summary.json").read_text())["seeds"] == [11]
        run(["simulate", "--config", str(config_file), "--out", str(out), "--seed", "2"], capsys)
        assert json.loads((tmp_path / "e.summary.json").read_text())["seeds"] == [2]

    def test_schema_error_names_field(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"merge_mode": "sometimes"}))
        code, _, err = run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv")], capsys)
        assert code == 1
        assert "merge_mode" in err

    def test_invalid_json(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text("{")
        code, _, _ = run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv")], capsys)
        assert code == 1

    def test_missing_out_is_usage_error(self, config_file, capsys):
        assert run(["simulate", "--config", str(config_file)], capsys)[0] == 2

    def test_default_fixture(self, tmp_path, capsys):
        out = tmp_path / "d.csv"
        code, _, _ = run(["simulate", "--config", str(fixture_path("default.json")), "--out", str(out),
                          "--seed", "0"], capsys)
        assert code == 0
        assert len(out.read_text().splitlines()) > 9


def test_console_script_byte_identical(tmp_path, config_file):
    outs = []
    for name in ("r1", "r2"):
        d = tmp_path / name
        d.mkdir()
        cmd = [sys.executable, "-m", "histmerge.cli", "simulate", "--config", str(config_file),
               "--out", str(d / "t.csv"), "--trials", "2"]
        assert subprocess.run(cmd, capture_output=True).returncode == 0
        outs.append([(d / f).read_bytes() for f in ("t_trial000.csv", "t_trial001.csv", "t.summary.json")])
    assert outs[0] == outs[1]

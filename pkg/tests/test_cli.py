import json

import pytest

from dmanc.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, main


@pytest.fixture
def config(tmp_path):
    cfg = {
        "name": "cli",
        "duration": 2000,
        "N": 16,
        "noise": {"kind": "white-gaussian"},
        "compensation": {"method": "true"},
        "algorithms": {"mcfxlms": {"mu": 1e-3}, "mgdfxlms": {"mu": 1e-3}},
    }
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


class TestCli:
    def test_run(self, config, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--config", str(config), "--preset", "desk", "--out", str(out), "--seed", "3"]) == EXIT_OK
        assert (out / "mcfxlms.csv").exists() and (out / "record.json").exists()
        assert json.loads((out / "record.json").read_text())["scenario"]["seed"] == 3
        assert len(capsys.readouterr().out.strip().splitlines()) == 2

    def test_run_diverged_still_ok(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"duration": 3000, "compensation": {"method": "true"}, "ceiling": 100.0,
                                 "noise": {"kind": "white-gaussian"}, "algorithms": {"mcfxlms": {"mu": 10.0}}}))
        assert main(["run", "--config", str(p), "--preset", "desk"]) == EXIT_OK

    def test_invalid_config(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"algorithms": {"nope": {"mu": 1}}}))
        assert main(["run", "--config", str(p), "--preset", "desk"]) == EXIT_INVALID
        assert "error" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        assert main(["run", "--config", str(p)]) == EXIT_INVALID

    def test_missing_config(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "none.json")]) == EXIT_IO

    def test_bad_preset_flag(self, config):
        with pytest.raises(SystemExit) as info:
            main(["run", "--config", str(config), "--preset", "huge"])
        assert info.value.code != 0

    def test_compare_records(self, config, tmp_path, capsys):
        main(["run", "--config", str(config), "--preset", "desk", "--out", str(tmp_path / "a")])
        capsys.readouterr()
        rc = main(["compare", str(tmp_path / "a" / "record.json"), "--mode", "steady-state-weights",
                   "--out", str(tmp_path / "cmp")])
        assert rc == EXIT_OK
        rep = json.loads(capsys.readouterr().out)
        assert rep["reference"] == "cli/mcfxlms"
        assert (tmp_path / "cmp" / "compare.json").exists()

    def test_compare_needs_input(self):
        assert main(["compare"]) == EXIT_INVALID

    def test_compare_from_config(self, config, capsys):
        assert main(["compare", "--config", str(config), "--preset", "desk", "--mode", "nse-curves"]) == EXIT_OK
        assert "delta_db" in capsys.readouterr().out

    def test_sweep(self, config, tmp_path, capsys):
        rc = main(["sweep", "--config", str(config), "--preset", "desk", "--axis", "mu", "--values", "1e-4,2e-4",
                   "--out", str(tmp_path / "s")])
        assert rc == EXIT_OK
        assert len(json.loads(capsys.readouterr().out)["summary"]) == 4

    def test_sweep_bad_values(self, config):
        assert main(["sweep", "--config", str(config), "--preset", "desk", "--axis", "H", "--values", "a,b"]) == EXIT_INVALID

    def test_analyze(self, config, tmp_path, capsys):
        rc = main(["analyze", "--config", str(config), "--preset", "desk", "--delays", "0,1", "--wiener",
                   "--out", str(tmp_path)])
        assert rc == EXIT_OK
        rep = json.loads(capsys.readouterr().out)
        b = rep["bounds"]
        assert b["delayed"][0]["global_bound"] == b["global_no_delay"]
        assert b["delayed"][1]["global_bound"] == pytest.approx(0.5 * b["global_no_delay"])
        assert rep["complexity"]["MCFxLMS"]["mults"] == 4 * 4 * (2 * 16 + 64) + 4 * 16
        assert rep["wiener_nse_db"] < 0
        assert (tmp_path / "analysis.json").exists()

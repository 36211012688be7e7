import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from dfsmem.experiments.cli import cli_main, read_storage_csv, to_csv, to_json
from dfsmem.experiments.config import load_config

PAPER_CFG = Path(__file__).resolve().parents[1] / "configs" / "paper.yaml"


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(yaml.safe_dump({"run": {"times": [2.0, 240.0, 960.0], "shots": 30,
                                         "prep_shots": 20, "workers": 1,
                                         "detect_trials": 5000, "parity_trajectories": 5}}))
    return p


def _run(argv, capsys):
    code = cli_main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestConfigFile:
    def test_paper_config_matches_defaults(self):
        cfg = load_config(PAPER_CFG)
        from dfsmem.experiments.config import from_dict
        d = from_dict({})
        assert cfg.run == d.run and cfg.gate == d.gate and cfg.chain == d.chain
        assert cfg.noise.leak_rate == pytest.approx(d.noise.leak_rate, rel=1e-4)


class TestCommands:
    def test_storage_csv_deterministic(self, tmp_path, small_cfg, capsys):
        outs = []
        for k in range(2):
            out = tmp_path / f"o{k}"
            code, stdout, _ = _run(["storage", "--config", small_cfg, "--seed", 7, "--out", out,
                                    "--format", "csv"], capsys)
            assert code == 0
            assert stdout.strip() == str(out / "storage.csv")
            outs.append((out / "storage.csv").read_bytes())
        assert outs[0] == outs[1]
        header = outs[0].decode().splitlines()[0]
        assert header.startswith("T,shots,fidelity")

    def test_fit_from_storage_csv(self, tmp_path, small_cfg, capsys):
        _run(["storage", "--config", small_cfg, "--out", tmp_path, "--format", "csv"], capsys)
        code, stdout, _ = _run(["fit", "--in", tmp_path / "storage.csv"], capsys)
        assert code == 0
        d = json.loads(stdout)
        assert d["command"] == "fit"
        assert len(d["result"]["ci68"]) == 2
        assert "tau" in d["result"]

    def test_json_envelope(self, small_cfg, capsys):
        code, stdout, _ = _run(["prep-fidelity", "--config", small_cfg, "--seed", 3], capsys)
        assert code == 0
        d = json.loads(stdout)
        assert d["seed"] == 3 and d["tool"] == "dfsmem" and "version" in d
        assert d["config"]["run"]["seed"] == 3
        assert 0.9 <= d["result"]["analytic_fidelity"] <= 1.0

    def test_gate_design(self, capsys):
        code, stdout, _ = _run(["gate-design", "--config", PAPER_CFG], capsys)
        assert code == 0
        pair = json.loads(stdout)["result"]["pairs"][0]
        assert pair["theta"] == pytest.approx(np.pi / 10, abs=1e-6)
        assert pair["max_abs_alpha"] <= 1e-6
        assert pair["bell_fidelity_calibrated"] == pytest.approx(0.991, abs=1e-9)

    def test_detect_calib_csv(self, small_cfg, capsys):
        code, stdout, _ = _run(["detect-calib", "--config", small_cfg, "--format", "csv"], capsys)
        assert code == 0
        assert stdout.splitlines()[0] == "quantity,value,expected,sigma"

    def test_parity_json(self, tmp_path, capsys):
        p = tmp_path / "par.yaml"
        p.write_text(yaml.safe_dump({"noise": {"ou_sigma": 0.0, "common_sigma": 0.0},
                                     "run": {"windows": [[0.0, 1.0]]}}))
        code, stdout, _ = _run(["parity", "--config", p], capsys)
        assert code == 0
        assert json.loads(stdout)["result"]["fit"]["period"] == pytest.approx(0.2691, rel=1e-2)


class TestExitCodes:
    def test_unknown_command(self, capsys):
        code, _, err = _run(["bogus"], capsys)
        assert code == 1
        assert "usage" in err

    def test_no_command(self, capsys):
        assert _run([], capsys)[0] == 1

    def test_validation_error(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("noise:\n  leak_rate: -1\n")
        code, _, err = _run(["storage", "--config", p], capsys)
        assert code == 1
        assert "noise.leak_rate" in err

    def test_missing_fit_input(self, tmp_path, capsys):
        assert _run(["fit", "--in", tmp_path / "none.csv"], capsys)[0] == 1

    def test_solver_failure(self, tmp_path, capsys):
        p = tmp_path / "gate.yaml"
        p.write_text("gate:\n  n_segments: 4\n")
        code, _, err = _run(["gate-design", "--config", p], capsys)
        assert code == 2
        assert "infeasible" in err


class TestSerialization:
    def test_json_non_finite(self):
        d = json.loads(to_json({"a": np.inf, "b": np.float64(1.5), "c": np.arange(2)}))
        assert d == {"a": "inf", "b": 1.5, "c": [0, 1]}

    def test_csv_float_repr(self):
        text = to_csv([{"x": 0.1 + 0.2, "y": 3}])
        assert text == "x,y\n0.30000000000000004,3\n"

    def test_read_storage_csv_columns(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("T,k\n1,2\n")
        from dfsmem.errors import ValidationError
        with pytest.raises(ValidationError):
            read_storage_csv(p)

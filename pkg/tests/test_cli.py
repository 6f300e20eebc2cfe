import json
from pathlib import Path

import pytest

from statecon.cli import main


SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def run(tmp_path, *argv):
    out = tmp_path / "out"
    return main(list(argv) + ["--out", str(out)]), out


@pytest.fixture
def mini_config(tmp_path):
    cfg = {
        "domain": {"shape": "ball", "center": [0.0, 0.0], "radius": 1.0},
        "problem": {"family": "quadratic",
                    "potential": {"type": "linear", "b": [-3.0, 0.0]},
                    "terminal": {"type": "zero"},
                    "T": 1.0, "mu": 1.0, "M": 9.0, "kappa": 0.0},
        "x0": [0.0, 0.0],
        "solver": {"N": 32},
    }
    path = tmp_path / "mini.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def mini_mfg_config(tmp_path):
    cfg = {
        "domain": {"shape": "ball", "center": [0.0, 0.0], "radius": 1.0},
        "problem": {"family": "quadratic",
                    "terminal": {"type": "zero"},
                    "T": 1.0, "mu": 1.0, "M": 2.0, "kappa": 1.0},
        "mfg": {
            "coupling": {"amp": 0.4, "scale": 0.5},
            "m0": {"points": [[0.05, 0.0], [-0.05, 0.05]],
                   "weights": [0.5, 0.5]},
            "alpha": 0.5, "tol": 1e-3, "max_iter": 50, "N": 32,
            "n_times": 5,
            "value": {"n_points": 3, "n_times": 2, "N": 32},
        },
    }
    path = tmp_path / "mfg.json"
    path.write_text(json.dumps(cfg))
    return path


class TestSolve:
    def test_writes_artifacts_and_passes(self, tmp_path, mini_config, capsys):
        rc, out = run(tmp_path, "solve", "--config", str(mini_config))
        assert rc == 0
        assert (out / "trajectory.csv").exists()
        rep = json.loads((out / "pmp_report.json").read_text())
        assert all(rep["checks"].values())
        assert "solve:" in capsys.readouterr().out

    def test_byte_identical_reruns(self, tmp_path, mini_config):
        rc1, out1 = main(["solve", "--config", str(mini_config),
                          "--out", str(tmp_path / "a")]), tmp_path / "a"
        rc2, out2 = main(["solve", "--config", str(mini_config),
                          "--out", str(tmp_path / "b")]), tmp_path / "b"
        assert rc1 == rc2 == 0
        for name in ("trajectory.csv", "pmp_report.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_grid_override(self, tmp_path, mini_config):
        rc, out = run(tmp_path, "solve", "--config", str(mini_config),
                      "--grid-n", "16")
        assert rc == 0
        rows = (out / "trajectory.csv").read_text().strip().splitlines()
        assert len(rows) == 18  # header + 17 knots


class TestPMPCheck:
    def test_round_trip_through_csv(self, tmp_path, mini_config):
        rc, out = run(tmp_path, "solve", "--config", str(mini_config))
        assert rc == 0
        rc2 = main(["pmp-check", "--config", str(mini_config),
                    "--trajectory", str(out / "trajectory.csv"),
                    "--out", str(tmp_path / "check")])
        assert rc2 == 0
        rep = json.loads(
            (tmp_path / "check" / "pmp_report.json").read_text())
        assert all(rep["checks"].values())

    def test_missing_trajectory_is_config_error(self, tmp_path, mini_config,
                                                capsys):
        rc, _ = run(tmp_path, "pmp-check", "--config", str(mini_config))
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestValue:
    def test_reports_lipschitz_constants(self, tmp_path, capsys):
        rc, out = run(tmp_path, "value", "--config",
                      str(SCENARIOS / "S2.json"), "--grid-n", "3")
        assert rc == 0
        rep = json.loads((out / "value_report.json").read_text())
        assert rep["failures"] == 0
        assert 0.0 < rep["Lx"] < 10.0
        assert (out / "value.csv").exists()


class TestMFG:
    def test_equilibrium_artifacts(self, tmp_path, mini_mfg_config, capsys):
        rc, out = run(tmp_path, "mfg", "--config", str(mini_mfg_config))
        assert rc == 0
        for name in ("flow.csv", "residuals.csv", "mild_value.csv"):
            assert (out / name).exists()
        lines = (out / "residuals.csv").read_text().strip().splitlines()
        final = float(lines[-1].split(",")[1])
        assert final <= 1e-3


class TestGeometryAndAssumptions:
    @pytest.mark.parametrize("scenario", ["S1", "S2", "S3", "S4"])
    def test_geometry_passes(self, tmp_path, scenario):
        rc, out = run(tmp_path, "geometry-test", "--config",
                      str(SCENARIOS / f"{scenario}.json"))
        assert rc == 0
        rep = json.loads((out / "geometry_report.json").read_text())
        assert rep["unit_gradient_error"] < 1e-9

    @pytest.mark.parametrize("scenario", ["S1", "S2", "S3", "S4"])
    def test_assumptions_pass(self, tmp_path, scenario):
        rc, out = run(tmp_path, "assumptions", "--config",
                      str(SCENARIOS / f"{scenario}.json"))
        assert rc == 0
        rep = json.loads((out / "assumptions.json").read_text())
        assert all(c["passed"] for c in rep["checks"].values())


class TestErrors:
    def test_mu_below_one_rejected(self, tmp_path, capsys):
        cfg = {"domain": {"shape": "ball", "center": [0, 0], "radius": 1.0},
               "problem": {"family": "quadratic", "T": 1.0, "mu": 0.5,
                           "M": 1.0, "kappa": 0.0}}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        rc, _ = run(tmp_path, "solve", "--config", str(path))
        assert rc == 1
        assert "mu must satisfy" in capsys.readouterr().err

    def test_unreadable_config(self, tmp_path, capsys):
        rc, _ = run(tmp_path, "solve", "--config",
                    str(tmp_path / "missing.json"))
        assert rc == 1
        assert "cannot read config" in capsys.readouterr().err

import json

import pytest
from conftest import synthetic_nwts, write_nwts_csv

from mirake.cli import main


def test_oracle_prints_grid(capsys):
    assert main(["oracle", "--scenario", "case-control", "--grid-row", "0", "--grid-row", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "beta0,delta0,alpha_star,beta_star"
    b, d, a_s, b_s = lines[1].split(",")
    assert (float(b), float(d), float(b_s)) == (1.0, 0.0, 1.0)
    assert len(lines) == 3


def test_simulate_writes_outputs_and_report_roundtrip(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["simulate", "--scenario", "surrogate-additive", "--grid-row", "0", "--reps", "3",
                 "--imputations", "2", "--estimators", "IPW,Raking,MIR-Boot", "--out", str(out)])
    assert code == 0
    md = capsys.readouterr().out
    assert "MIR-Boot" in md
    assert {p.name for p in out.iterdir()} >= {"report.csv", "report.md", "config.json"}
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["K"] == 3 and cfg["grid"] == [[1.0, 0.0]]
    assert main(["report", "--in", str(out), "--format", "csv"]) == 0
    assert capsys.readouterr().out == (out / "report.csv").read_text()
    assert main(["report", "--in", str(out), "--format", "md"]) == 0
    assert capsys.readouterr().out == (out / "report.md").read_text()


def test_config_file_and_flag_override(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[experiment]\nscenario = case-control\ngrid_rows = 0\nreps = 50\n"
                   "imputations = 2\nestimators = MLE, IPW\n")
    assert main(["simulate", "--config", str(ini), "--reps", "2"]) == 0
    assert "| MLE | IPW |" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--scenario", "case-control", "--reps", "1"],
        ["simulate", "--scenario", "case-control", "--grid-row", "9"],
        ["simulate", "--scenario", "case-control", "--estimators", "Nope"],
        ["simulate"],
    ],
)
def test_config_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_data_exit_3(tmp_path, capsys):
    assert main(["nwts", "--data", str(tmp_path / "absent.csv"), "--reps", "2"]) == 3
    assert main(["report", "--in", str(tmp_path)]) == 3


def test_bad_schema_exit_3(tmp_path, capsys):
    cols = synthetic_nwts(N=40)
    del cols["stage"]
    path = write_nwts_csv(tmp_path / "bad.csv", cols)
    assert main(["nwts", "--data", str(path), "--reps", "2"]) == 3
    assert "stage" in capsys.readouterr().err


def test_numerical_failure_exit_4(monkeypatch, capsys):
    from mirake import harness
    from mirake.errors import NonConvergence

    def boom(*a, **k):
        raise NonConvergence("stuck")

    monkeypatch.setattr(harness, "run_monte_carlo", boom)
    assert main(["simulate", "--scenario", "case-control", "--grid-row", "0", "--reps", "2"]) == 4
    assert "stuck" in capsys.readouterr().err

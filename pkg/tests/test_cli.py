import io

import pytest

from vpdroop.cli import main
from vpdroop.config import parse_config
from vpdroop.smallsignal import read_eigen_csv
from vpdroop.timedomain import SimulationTrace


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_equilibrium_writes_versioned_csv(tmp_path, capsys):
    code, out, _ = run(capsys, "equilibrium", "fig4", "--out", str(tmp_path))
    assert code == 0 and "inverter 1" in out
    lines = (tmp_path / "fig4_equilibrium.csv").read_text().splitlines()
    assert lines[0].startswith("# vpdroop-equilibrium schema=1")
    assert lines[1].startswith("inverter,E,I,phi,V,psi,P,Q")
    assert lines[2].startswith("1,") and lines[3].startswith("2,")


def test_eigen_reports_stable(tmp_path, capsys):
    code, out, _ = run(capsys, "eigen", "--config", "fig5_eigen", "--out", str(tmp_path))
    assert code == 0 and "stable=True" in out
    rows = read_eigen_csv((tmp_path / "fig5_eigen_eigen.csv").read_text())
    assert rows and all(r["stable"] == "1" for r in rows)


def test_sweep_with_command_line_grid(tmp_path, capsys):
    code, out, _ = run(capsys, "sweep", "fig5_eigen", "--axis", "clock_angle", "--grid=-5:5:3",
                       "--out", str(tmp_path))
    assert code == 0 and out.count("stable=True") == 3
    text = (tmp_path / "fig5_eigen_sweep.csv").read_text()
    assert text.startswith("# vpdroop-eigen schema=1 axis=clock_angle")
    assert {r["parameter"] for r in read_eigen_csv(text)} == {"-5.0", "0.0", "5.0"}


def test_sweep_without_axis_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "sweep", "fig5_eigen", "--out", str(tmp_path))
    assert code == 2 and "axis" in err


def test_simulate_writes_trace_and_metrics(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("VPDROOP_OUT", str(tmp_path))
    code, out, _ = run(capsys, "simulate", "fig5_eigen", "--duration", "0.05", "--decimate", "5")
    assert code == 0 and "P1=" in out
    with open(tmp_path / "fig5_eigen_trace.csv") as fh:
        tr = SimulationTrace.from_csv(fh)
    assert tr.n == 2 and tr.time[-1] == pytest.approx(0.05)
    metrics = (tmp_path / "fig5_eigen_metrics.txt").read_text()
    assert "q_share_12=" in metrics
    assert not list(tmp_path.glob("*.partial"))


def test_failed_simulation_leaves_partial_file(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "fig5_eigen", "--dt", "1e-4", "--duration", "0.05",
                       "--set", "simulation.method=rk4", "--set", "simulation.initial=zero",
                       "--out", str(tmp_path))
    assert code == 4 and "simulation error" in err
    assert (tmp_path / "fig5_eigen_trace.csv.partial").exists()
    assert not (tmp_path / "fig5_eigen_trace.csv").exists()


def test_config_errors_exit_2(tmp_path, capsys):
    assert run(capsys, "equilibrium", "no_such_scenario", "--out", str(tmp_path))[0] == 2
    assert run(capsys, "equilibrium", "fig4", "--set", "load.nope=1", "--out", str(tmp_path))[0] == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[network]\ninverters = 1\n[inverter]\nfilter_capacitance = -1 uF\n[load]\n")
    code, _, err = run(capsys, "equilibrium", str(bad), "--out", str(tmp_path))
    assert code == 2 and "line 4" in err
    assert run(capsys, "equilibrium", "--out", str(tmp_path))[0] == 2


def test_numeric_error_exit_3(tmp_path, capsys):
    code, _, err = run(capsys, "eigen", "comparison_full", "--out", str(tmp_path))
    assert code == 3 and "numerical error" in err


def test_io_error_exit_5(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(capsys, "equilibrium", "fig4", "--out", str(blocker / "sub"))[0] == 5


def test_emit_round_trips(capsys):
    code, out, _ = run(capsys, "emit", "plug_and_play")
    assert code == 0
    code2, out2, _ = run(capsys, "emit", "plug_and_play")
    assert out == out2
    assert parse_config(out).config.n == 3


def test_override_changes_result(tmp_path, capsys):
    run(capsys, "equilibrium", "fig4", "--out", str(tmp_path))
    a = (tmp_path / "fig4_equilibrium.csv").read_text()
    run(capsys, "equilibrium", "fig4", "--set", "load.apparent_power=700", "--out", str(tmp_path))
    assert (tmp_path / "fig4_equilibrium.csv").read_text() != a


def test_verify_subset(capsys):
    code, out, _ = run(capsys, "verify", "--only", "1", "2")
    assert code == 0
    assert "[PASS]  1" in out and "[PASS]  2" in out and "2/2 criteria passed" in out


def test_config_given_twice_is_rejected(capsys):
    with pytest.raises(SystemExit):
        main(["eigen", "fig4", "--config", "fig4"])

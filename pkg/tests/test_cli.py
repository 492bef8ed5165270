import numpy as np
import pytest

from mavstack import cli
from mavstack.harness import COLUMNS, NumericalAbort, RunLog, read_report, rms_metrics


@pytest.fixture
def hover_ini(tmp_path):
    path = tmp_path / "hover.ini"
    path.write_text("[scenario]\nname = hover\nduration = 2\nwindow = 0.5:2\n[sensors]\npreset = indoor\n",
                    encoding="utf-8")
    return path


def test_sim_run_writes_outputs(hover_ini, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["sim", "run", "--config", str(hover_ini), "--seed", "3", "--out", str(out)]) == 0
    printed = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    assert printed["seed"] == "3"
    log = RunLog.from_csv(out / "runlog.csv")
    report = read_report(out / "report.txt")
    assert float(report["control.pose"]) == rms_metrics(log, "control", (0.5, 2.0)).pose


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[scenario]\nname = orbit\n", encoding="utf-8")
    assert cli.main(["sim", "run", "--config", str(bad)]) == 2
    assert cli.main(["sim", "run", "--config", str(tmp_path / "missing.ini")]) == 2
    assert "error" in capsys.readouterr().err


def test_numerical_abort_exits_3(hover_ini, tmp_path, monkeypatch):
    def boom(cfg):
        raise NumericalAbort("non-finite state", np.zeros((50, len(COLUMNS))))

    monkeypatch.setattr(cli, "run_scenario", boom)
    out = tmp_path / "run"
    assert cli.main(["sim", "run", "--config", str(hover_ini), "--out", str(out)]) == 3
    assert (out / "abort_dump.csv").read_text(encoding="utf-8").startswith("t,x,y,z")


def test_sweep(hover_ini, tmp_path, capsys):
    out = tmp_path / "sweep"
    code = cli.main(["sim", "sweep", "--config", str(hover_ini), "--param", "sensors.sigma_p=0:0.02:2",
                     "--out", str(out), "--jobs", "2"])
    assert code == 0
    lines = (out / "sweep.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3 and lines[0].startswith("index,sensors.sigma_p,")
    assert (out / "run_001" / "runlog.csv").is_file()


@pytest.mark.parametrize("spec,values", [
    ("wind.gust_sigma=0:1:3", (0.0, 0.5, 1.0)),
    ("vehicle.mass=3.5,3.6", (3.5, 3.6)),
])
def test_parse_sweep(spec, values):
    path, got = cli.parse_sweep(spec)
    assert path == spec.split("=")[0]
    assert got == values


def test_bad_sweep_exits_2(hover_ini):
    assert cli.main(["sim", "sweep", "--config", str(hover_ini), "--param", "mass=1:2:3"]) == 2
    assert cli.main(["sim", "sweep", "--config", str(hover_ini), "--param", "vehicle.mass=1:2"]) == 2


def test_sysid_chirp_and_fit(tmp_path, capsys):
    log = tmp_path / "chirp.csv"
    assert cli.main(["sysid", "chirp", "--channel", "phi", "--out", str(log), "--duration", "30"]) == 0
    assert cli.main(["sysid", "fit", "--log", str(log), "--channel", "phi", "--order", "2",
                     "--default-scales"]) == 0
    out = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    assert out["order"] == "2"
    assert float(out["k"]) == pytest.approx(0.975, rel=0.01)
    assert float(out["omega"]) == pytest.approx(5.2, rel=0.01)


def test_sysid_fit_bad_log_exits_2(tmp_path):
    bad = tmp_path / "x.csv"
    bad.write_text("a,b\n", encoding="utf-8")
    assert cli.main(["sysid", "fit", "--log", str(bad), "--channel", "phi", "--order", "1"]) == 2


def test_eval_rms(tmp_path, capsys):
    data = np.zeros((100, len(COLUMNS)))
    data[:, 0] = np.arange(100) * 0.02
    data[:, 1] = 0.1
    RunLog(data).to_csv(tmp_path / "log.csv")
    assert cli.main(["eval", "rms", "--log", str(tmp_path / "log.csv"), "--kind", "control",
                     "--window", "0:1"]) == 0
    out = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    assert float(out["pose"]) == pytest.approx(0.1)
    assert out["samples"] == "51"
    assert cli.main(["eval", "rms", "--log", str(tmp_path / "log.csv"), "--kind", "control",
                     "--window", "5:6"]) == 2
    assert cli.main(["eval", "rms", "--log", str(tmp_path / "log.csv"), "--kind", "control",
                     "--window", "oops"]) == 2

import argparse
import json

import pytest

from eeprobe import cli
from eeprobe.core import ExperimentReport
from eeprobe.errors import VerificationFailure


def _run(tmp_path, *argv):
    return cli.run(list(argv) + ["--backend", "sim", "--seed", "3", "--out", str(tmp_path)])


def test_parse_cpus():
    assert cli.parse_cpus("0-3,8,10-11") == [0, 1, 2, 3, 8, 10, 11]
    assert cli.parse_cpus("5,5,1") == [1, 5]
    for bad in ("", "a", "1-x", ","):
        with pytest.raises(argparse.ArgumentTypeError):
            cli.parse_cpus(bad)


def test_pstate_writes_all_outputs(tmp_path, capsys):
    assert _run(tmp_path, "pstate", "--from", "1200000", "--to", "2400000", "--reps", "20") == 0
    for suffix in (".json", ".csv", ".dat", "-hist.json", "-hist.dat"):
        assert (tmp_path / f"pstate{suffix}").exists(), suffix
    rep = ExperimentReport.from_json((tmp_path / "pstate.json").read_text())
    assert rep.experiment == "pstate" and rep.backend == "simulation" and not rep.truncated
    assert len(rep.results["samples"]) == 20
    assert "wrote" in capsys.readouterr().out


def test_json_flag_prints_the_report(tmp_path, capsys):
    assert _run(tmp_path, "tstate", "--levels", "2-3", "--duration-s", "0.01", "--json") == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads((tmp_path / "tstate.json").read_text())


def test_pperf_is_appended_to_tstate_report(tmp_path, capsys):
    assert _run(tmp_path, "tstate", "--levels", "2", "--duration-s", "0.01") == 0
    assert _run(tmp_path, "pperf", "--duration-s", "0.01") == 0
    tstate = json.loads((tmp_path / "tstate.json").read_text())
    pperf = json.loads((tmp_path / "pperf.json").read_text())
    assert tstate["results"]["pperf"] == pperf["results"]["samples"]


@pytest.mark.parametrize("argv", [
    ["pstate", "--from", "1234567", "--to", "2400000"],
    ["pstate", "--from", "1200000", "--to", "2400000", "--cpus", "500"],
    ["ufs-forced", "--sim-param", "no_such_knob=1"],
])
def test_configuration_errors_exit_2(tmp_path, capsys, argv):
    assert _run(tmp_path, *argv) == 2
    assert "eeprobe:" in capsys.readouterr().err


def test_hardware_without_access_exits_2(tmp_path, capsys):
    # this sandbox has no msr device, so the pre-check refuses to start
    code = cli.run(["ufs-forced", "--backend", "hardware", "--out", str(tmp_path),
                    "--msr-path", str(tmp_path / "no-msr/{cpu}")])
    assert code == 2
    assert not (tmp_path / "ufs-forced.json").exists()
    capsys.readouterr()


def test_sim_param_rejected_on_hardware(tmp_path, capsys):
    assert cli.run(["pstate", "--from", "1200000", "--to", "2400000", "--backend", "hardware",
                    "--sim-param", "power_tau_s=0", "--out", str(tmp_path)]) == 2
    capsys.readouterr()


def test_interrupt_writes_truncated_report(tmp_path, capsys, monkeypatch):
    def interrupted(hw, args, cpus, sink):
        hw.set_core_frequency(cpus[0], 1_200_000)
        raise KeyboardInterrupt
    monkeypatch.setitem(cli.RUNNERS, "pstate", interrupted)
    assert _run(tmp_path, "pstate", "--from", "1200000", "--to", "2400000") == 1
    rep = json.loads((tmp_path / "pstate.json").read_text())
    assert rep["truncated"] is True
    assert not (tmp_path / "pstate-hist.json").exists()
    assert "interrupted" in capsys.readouterr().err


def test_measurement_failure_exits_1(tmp_path, capsys, monkeypatch):
    def broken(hw, args, cpus, sink):
        raise VerificationFailure("counter went backwards")
    monkeypatch.setitem(cli.RUNNERS, "tstate", broken)
    assert _run(tmp_path, "tstate") == 1
    assert json.loads((tmp_path / "tstate.json").read_text())["truncated"] is True
    assert "counter went backwards" in capsys.readouterr().err

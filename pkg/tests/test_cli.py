import json
import os

import pytest

from antibunch.cli import main
from antibunch.streamio import read_curve_csv, read_stream

QUICK = ["--preset", "nanocrystal", "--time-s", "1", "--powers-mw", "2.7"]


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", *QUICK, "--seed", "7", "--out", str(out)]) == 0
    return out


def test_simulate_writes_streams_and_metadata(simulated):
    names = sorted(os.listdir(simulated))
    assert names == ["metadata.json", "p00_ch1.phot", "p00_ch2.phot"]
    meta = json.loads((simulated / "metadata.json").read_text())
    assert meta["seed"] == 7
    s = read_stream(simulated / "p00_ch1.phot")
    assert s.duration == 10 ** 12
    assert meta["files"][0]["events"] == len(s)


def test_simulate_is_reproducible(simulated, tmp_path):
    assert main(["simulate", *QUICK, "--seed", "7", "--out", str(tmp_path)]) == 0
    for name in os.listdir(simulated):
        assert (simulated / name).read_bytes() == (tmp_path / name).read_bytes()


def test_correlate_and_fit(simulated, tmp_path, capsys):
    csv = tmp_path / "c.csv"
    rc = main(["correlate", str(simulated / "p00_ch1.phot"), str(simulated / "p00_ch2.phot"),
               "--range-ns", "300.5", "--rho", str(20 / 21), "--out", str(csv)])
    assert rc == 0
    cols = read_curve_csv(csv)
    assert cols["tau_ns"][0] == -300.0 and "g2_corrected" in cols
    meta = json.loads((tmp_path / "c.csv.json").read_text())
    assert meta["mode"] == "all-pairs" and meta["coincidences"] == int(cols["counts"].sum())
    assert "C_N(0)=" in capsys.readouterr().err
    rc = main(["fit", str(csv), "--model", "dip", "--out", str(tmp_path / "f.json")])
    fit = json.loads((tmp_path / "f.json").read_text())
    assert rc == (0 if fit["fit"]["converged"] else 2)


def test_correlate_tac_mode(simulated, tmp_path):
    rc = main(["correlate", str(simulated / "p00_ch1.phot"), str(simulated / "p00_ch2.phot"),
               "--mode", "tac", "--tac-delay-ns", "50", "--out", str(tmp_path / "t.csv")])
    assert rc == 0
    assert json.loads((tmp_path / "t.csv.json").read_text())["mode"] == "tac-start-stop"


def test_correlate_rejects_mismatched_durations(simulated, tmp_path):
    other = tmp_path / "o"
    assert main(["simulate", "--preset", "nanocrystal", "--time-s", "0.5", "--powers-mw", "2.7",
                 "--out", str(other)]) == 0
    rc = main(["correlate", str(simulated / "p00_ch1.phot"), str(other / "p00_ch2.phot")])
    assert rc == 1


def test_correlate_rejects_headerless_file(tmp_path, capsys):
    bad = tmp_path / "bad.phot"
    bad.write_bytes(b"\0" * 10)
    assert main(["correlate", str(bad), str(bad)]) == 1
    assert "header" in capsys.readouterr().err
    assert main(["correlate", str(tmp_path / "missing.phot")]) == 1


def test_fit_failure_exit_code(tmp_path):
    csv = tmp_path / "flat.csv"
    rows = ["tau_ns,counts,C_N,sigma"] + [f"{t}.0,0,nan,1.0" for t in range(-20, 21)]
    csv.write_text("\n".join(rows) + "\n")
    assert main(["fit", str(csv), "--model", "dip"]) == 2
    csv.write_text("\n".join(rows[:5]) + "\n")
    assert main(["fit", str(csv)]) == 1  # too few bins
    assert main(["fit", str(tmp_path / "nope.csv")]) == 1


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 1
    assert main(["simulate", "--preset", "bulk", "--config", "x.toml", "--out", str(tmp_path)]) == 1
    assert main(["simulate", *QUICK, "--bin-width-ns", "0.7", "--out", str(tmp_path)]) == 1
    assert main(["sweep", *QUICK]) == 1


def test_config_error_reports_line(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("seed = 1\n[emitter]\ncount = \"two\"\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "emitter.count (line 3)" in capsys.readouterr().err


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", *QUICK, "--out", str(blocker / "sub")]) == 1
    assert "cannot create output directory" in capsys.readouterr().err
    assert main(["report", "--tau-ns", "25", "--out", str(blocker / "r.json")]) == 1


def test_report(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["report", "--tau-ns", "25", "--g2-zero", "0.5", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["emitter_count"]["p_rounded"] == 2
    assert "22.73 ns" in capsys.readouterr().out


def test_report_units_check(tmp_path):
    sweep = tmp_path / "s.json"
    sweep.write_text(json.dumps({"lifetime": {"tau_s": 2.5e-8}}))
    assert main(["report", "--sweep", str(sweep)]) == 1
    sweep.write_text(json.dumps({"lifetime": {"tau_ns": 25.0, "tau_err_ns": 0.5}}))
    assert main(["report", "--sweep", str(sweep)]) == 0
    assert main(["report", "--g2-zero", "1.5"]) == 1

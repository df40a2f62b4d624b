import json

import pytest

from btbsim import __version__
from btbsim.cli import (EXIT_NUMERICAL, EXIT_PARSE, EXIT_USAGE, EXIT_VALIDATION, main, read_event_times,
                        summarize)
from btbsim.scenario import CASES, case_path


def _summary(path):
    out = {}
    for line in path.read_text().splitlines()[1:]:
        k, v = line.split(" ", 1)
        out[k] = v
    return out


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_cases_lists_builtins(capsys):
    assert main(["cases"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in CASES)


def test_validate_ok_and_invalid(tmp_path, capsys):
    assert main(["validate", str(case_path("black_start"))]) == 0
    bad = json.loads(case_path("black_start").read_text())
    bad["devices"][0]["bus"] = "999"
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert main(["validate", str(p)]) == EXIT_VALIDATION
    assert "devices[0].bus: unknown bus '999'" in capsys.readouterr().err


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "dd"
    assert main(["run", "--case", "dynamic_decoupling", "--duration", "2", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["events.log", "record.csv", "summary.txt"]
    s = _summary(out / "summary.txt")
    assert float(s["btb.energy_B_kWh"]) == 0.0
    assert "INIT" in (out / "events.log").read_text()


def test_run_missing_file_is_parse_failure(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == EXIT_PARSE
    assert "missing.json" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_run_numerical_failure_writes_nothing(tmp_path):
    doc = json.loads(case_path("dynamic_decoupling").read_text())
    doc["sim"]["tol"] = 1e-12  # below round-off: the solver cannot converge
    p = tmp_path / "hard.json"
    p.write_text(json.dumps(doc))
    out = tmp_path / "o"
    assert main(["run", str(p), "--duration", "0.1", "--out", str(out)]) == EXIT_NUMERICAL
    assert not out.exists() or not any(out.iterdir())


def test_run_needs_a_source():
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == EXIT_USAGE


def test_run_all_cases(tmp_path):
    assert main(["run", "--all-cases", "--duration", "0.2", "--jobs", "1", "--out", str(tmp_path)]) == 0
    for name in CASES:
        assert (tmp_path / name / "record.csv").exists()


def test_repeated_runs_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--case", "black_start", "--duration", "1", "--out", str(tmp_path / d)]) == 0
    for f in ("record.csv", "events.log", "summary.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.fixture
def short_record(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--case", "dynamic_decoupling", "--duration", "5", "--out", str(out)]) == 0
    return out / "record.csv"


def test_plot_is_reproducible(short_record, tmp_path):
    a, b = tmp_path / "pa", tmp_path / "pb"
    for d in (a, b):
        assert main(["plot", str(short_record), "--channels", "f_MG0,f_MG1", "--channels", "Vdc_pu",
                     "--out", str(d)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["Vdc_pu.svg", "f_MG0_f_MG1.svg"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
        assert (a / n).read_bytes().startswith(b"<?xml")


def test_plot_event_markers_from_log(short_record):
    times = read_event_times(short_record.with_name("events.log"))
    assert times == [4.0]


def test_plot_empty_selection_is_usage_error(short_record, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["plot", str(short_record), "--channels", " , ", "--out", str(tmp_path)])
    assert exc.value.code == EXIT_USAGE


def test_plot_unknown_channel_lists_available(short_record, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["plot", str(short_record), "--channels", "nope", "--out", str(tmp_path / "p")])
    assert exc.value.code == EXIT_USAGE
    err = capsys.readouterr().err
    assert "nope" in err and "f_MG0" in err and "btb.Vdc_pu" in err


def test_summary_of_full_runs(builtin_runs):
    dd = summarize(builtin_runs("dynamic_decoupling").record)
    assert "btb.energy_B_kWh 0.000000" in dd
    bs = dict(line.split(" ") for line in summarize(builtin_runs("black_start").record).splitlines())
    assert float(bs["btb.peak_Vdc_pu"]) < 1.1
    assert float(bs["f_MG1.min_Hz"]) < float(bs["f_MG1.max_Hz"])

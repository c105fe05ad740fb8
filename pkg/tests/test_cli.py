import csv
import json
import subprocess
import sys

import pytest

from powlu.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write_config(path, **fields):
    path.write_text("".join(f"{k} = {v}\n" for k, v in fields.items()))
    return str(path)


@pytest.fixture
def tiny_config(tmp_path):
    return write_config(tmp_path / "tiny.txt", hidden=8, d_ff=16, steps=10, batch=8, record_every=5)


# --- curves ------------------------------------------------------------------------


def test_curves_powlu_swiglu(tmp_path):
    assert main(["curves", "--kinds", "powlu,swiglu", "--m", "3", "--range", "-6:8",
                 "--points", "1401", "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "curves.csv")
    assert rows[0] == ["kind", "m", "x", "value", "derivative"]
    assert len(rows) - 1 == 2802
    at4 = {r[0]: float(r[3]) for r in rows[1:] if float(r[2]) == 4.0}
    assert at4["powlu"] == pytest.approx(at4["swiglu"], rel=1e-12)
    assert {r[1] for r in rows[1:] if r[0] == "swiglu"} == {""}


def test_curves_two_points(tmp_path):
    assert main(["curves", "--kinds", "powlu", "--range", "-1:2", "--points", "2", "--out", str(tmp_path)]) == 0
    xs = [float(r[2]) for r in read_csv(tmp_path / "curves.csv")[1:]]
    assert xs == [-1.0, 2.0]


@pytest.mark.parametrize("argv", [
    ["curves", "--range", "3:3"],
    ["curves", "--range", "nonsense"],
    ["curves", "--points", "1"],
    ["curves", "--kinds", "relu"],
    ["curves", "--m", "12"],
    ["curves", "--bogus"],
    ["verify", "--m", ""],
    ["verify", "--m", ","],
    ["frobnicate"],
])
def test_usage_errors(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_USAGE


def test_no_command():
    assert main([]) == EXIT_USAGE


# --- verify ------------------------------------------------------------------------


def test_verify_m3(tmp_path, capsys):
    assert main(["verify", "--m", "3", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "verify.json").read_text())
    c = rep["constants"]
    assert abs(c["t0"] - 3.59) <= 0.01
    assert abs(c["t_star"] - 11.02) <= 0.01
    assert abs(c["m_upper"] - 10.02) <= 0.02
    assert "m=3: monotone (PASS)" in capsys.readouterr().out


def test_verify_m12_reports_violation_as_success(tmp_path):
    assert main(["verify", "--m", "12", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "verify.json").read_text())
    (entry,) = rep["per_m"]
    assert not entry["monotonicity"]["certified_monotone"]
    assert entry["passed"]


def test_verify_failure_exit_code(tmp_path, monkeypatch):
    import powlu.cli as cli

    def failing(m_list, n_points):
        return {"constants": {"t0": 0.0, "t_star": 0.0, "m_upper": 0.0}, "per_m": [], "failed": ["x"], "passed": False}

    monkeypatch.setattr(cli, "verification_report", failing)
    assert main(["verify", "--m", "3", "--out", str(tmp_path)]) == EXIT_VERIFY


# --- train / sweep / stats -------------------------------------------------------------


def test_train_writes_run_dir(tmp_path, tiny_config):
    out = tmp_path / "run"
    assert main(["train", "--config", tiny_config, "--seed", "3", "--out", str(out)]) == EXIT_OK
    for name in ("config.txt", "history.csv", "bands.csv", "channels.csv", "saturation.csv", "summary.json"):
        assert (out / name).exists()
    assert "seed = 3" in (out / "config.txt").read_text()
    assert len(read_csv(out / "history.csv")) == 12


def test_train_zero_steps(tmp_path):
    cfg = write_config(tmp_path / "c.txt", hidden=8, d_ff=16, steps=0)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == EXIT_OK
    rows = read_csv(tmp_path / "run" / "history.csv")
    assert rows[0] == ["step", "loss", "grad_norm"] and len(rows) == 2


def test_train_bad_config(tmp_path):
    cfg = write_config(tmp_path / "c.txt", widht=8)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == EXIT_USAGE


def test_train_missing_config(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.txt"), "--out", str(tmp_path)]) == EXIT_IO


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_abort_exit_code(tmp_path):
    cfg = write_config(tmp_path / "c.txt", hidden=8, d_ff=16, steps=5, kind="swiglu", lr=1e30)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "run")]) == 4


def test_sweep_rows_and_dirs(tmp_path, tiny_config):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", tiny_config, "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "comparison.csv")
    assert len(rows) == 5
    assert [r[0] for r in rows[1:]] == ["swiglu", "powlu(m=2)", "powlu(m=3)", "powlu(m=4)"]
    assert sorted(p.name for p in out.iterdir() if p.is_dir()) == [
        "0_swiglu", "1_powlu_m2", "2_powlu_m3", "3_powlu_m4"]


def test_stats(tmp_path, tiny_config):
    run = tmp_path / "run"
    assert main(["train", "--config", tiny_config, "--out", str(run)]) == 0
    assert main(["stats", str(run), "--format", "e5m2", "--out", str(tmp_path / "st")]) == EXIT_OK
    sat = read_csv(tmp_path / "st" / "saturation.csv")
    assert {r[2] for r in sat[1:]} == {"E5M2"}
    summary = json.loads((tmp_path / "st" / "stats.json").read_text())
    assert summary["format"] == "E5M2"
    assert "block0.fc2.fwd.x" in summary["tags"]


def test_stats_missing_dir(tmp_path, capsys):
    assert main(["stats", str(tmp_path / "empty"), "--out", str(tmp_path / "st")]) == EXIT_IO
    assert "config.txt" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "powlu", "curves", "--kinds", "silu", "--points", "3",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "curves.csv").exists()

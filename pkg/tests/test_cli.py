import csv
import subprocess
import sys

import numpy as np
import pytest

from povsched.calibrate import save_trade_db, synth_trades
from povsched.cli import main
from povsched.dynamics import save_kernel_csv

ALPHA_TRUE = np.array([0.35, 8.0, 5.0, 3.0])


def read_summary(path):
    with open(path, newline="") as fh:
        return {row["key"]: row["value"] for row in csv.DictReader(fh)}


def test_solve_preset_writes_schedule_and_summary(tmp_path, capsys):
    rc = main(["solve", "ra_medium", "--out-dir", str(tmp_path)])
    assert rc == 0
    assert "wrote" in capsys.readouterr().out

    with open(tmp_path / "schedule.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 90
    assert list(rows[0]) == ["minute", "d_n", "h_n", "shares", "X_cum", "maxPoV"]
    assert float(rows[0]["minute"]) == 150.0
    assert float(rows[-1]["X_cum"]) == pytest.approx(90000.0, rel=1e-12)

    summary = read_summary(tmp_path / "summary.csv")
    assert summary["status"] == "optimal"
    assert float(summary["expected_is_bps"]) == pytest.approx(4.570326799725374, rel=1e-10)
    assert float(summary["kkt_stationarity"]) <= 1e-8
    assert summary["mc_clipped_eigenvalues"] == "0"


def test_solve_output_is_byte_identical_across_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "dyn_asv", "--out-dir", str(a)]) == 0
    assert main(["solve", "dyn_asv", "--out-dir", str(b)]) == 0
    assert (a / "schedule.csv").read_bytes() == (b / "schedule.csv").read_bytes()
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_solve_unknown_scenario_is_a_validation_failure(tmp_path, capsys):
    rc = main(["solve", str(tmp_path / "nope.cfg"), "--out-dir", str(tmp_path)])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_solve_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("order.sighs = 1\n")
    rc = main(["solve", str(cfg), "--out-dir", str(tmp_path)])
    assert rc == 2
    assert "unknown config key" in capsys.readouterr().err


def test_solve_infeasible_order_exits_3(tmp_path, capsys):
    cfg = tmp_path / "tight.cfg"
    cfg.write_text("order.max_pov = 0.05\n")
    rc = main(["solve", str(cfg), "--out-dir", str(tmp_path)])
    assert rc == 3
    assert "cannot complete" in capsys.readouterr().err


def test_solve_starved_solver_exits_4_but_reports(tmp_path, capsys):
    cfg = tmp_path / "starved.cfg"
    cfg.write_text("order.risk_aversion = 1e-1\nsolver.max_iter = 1\n")
    rc = main(["solve", str(cfg), "--out-dir", str(tmp_path)])
    assert rc == 4
    assert "status 'max_iter'" in capsys.readouterr().err
    # diagnostics still land on disk for post-mortems
    assert read_summary(tmp_path / "summary.csv")["status"] == "max_iter"


def test_calibrate_round_trip(tmp_path, capsys):
    db = tmp_path / "db"
    save_trade_db(
        synth_trades(ALPHA_TRUE, 40, seed=2, v_star=5e4, eps0=5e4, noise_scale=0.0),
        db,
    )
    cfg = tmp_path / "cal.cfg"
    cfg.write_text("impact.v_star = 5e4\nimpact.eps0 = 5e4\n")
    out = tmp_path / "out"
    rc = main(["calibrate", str(db), str(cfg), "--out-dir", str(out)])
    assert rc == 0
    assert "trades used" in capsys.readouterr().out

    with open(out / "coefficients.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["coefficient"] for r in rows] == ["alpha0", "alpha1", "alpha2", "alpha3"]
    estimates = np.array([float(r["estimate"]) for r in rows])
    assert float(np.max(np.abs(estimates - ALPHA_TRUE))) < 1e-8

    summary = read_summary(out / "fit_summary.csv")
    assert int(summary["n_trades_used"]) >= 5
    assert int(summary["n_trades_loaded"]) == 40
    assert (out / "filter_report.csv").exists()


def test_calibrate_missing_config(tmp_path, capsys):
    rc = main(["calibrate", str(tmp_path), str(tmp_path / "none.cfg")])
    assert rc == 2
    assert "does not exist" in capsys.readouterr().err


def test_estimate_kernel_is_seed_deterministic(tmp_path):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(
        "order.t0 = 150\norder.t1 = 156\norder.x1 = 5000\n"
        "mc.paths = 400\nmc.substeps = 2\n"
    )
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["estimate-kernel", str(cfg), "--out-dir", str(a)]) == 0
    assert main(["estimate-kernel", str(cfg), "--out-dir", str(b)]) == 0
    assert main(["estimate-kernel", str(cfg), "--out-dir", str(c), "--seed", "8"]) == 0
    assert (a / "kernel.csv").read_bytes() == (b / "kernel.csv").read_bytes()
    assert (a / "kernel.csv").read_bytes() != (c / "kernel.csv").read_bytes()

    report = read_summary(a / "psd_report.csv")
    assert report["model"] == "brownian"
    assert report["intervals"] == "6"
    assert float(report["min_eigenvalue"]) >= 0.0 or int(report["clipped_eigenvalues"]) == 0


def test_estimate_kernel_rejects_precomputed_kernels(tmp_path, capsys):
    k = tmp_path / "k.csv"
    save_kernel_csv(np.eye(3), k)
    cfg = tmp_path / "pre.cfg"
    cfg.write_text(f"dynamics.model = kernel_csv\ndynamics.kernel_csv = {k}\n")
    rc = main(["estimate-kernel", str(cfg), "--out-dir", str(tmp_path)])
    assert rc == 2
    assert "already-estimated" in capsys.readouterr().err


def test_estimate_kernel_paths_override_validated(tmp_path, capsys):
    rc = main(["estimate-kernel", "ra_low", "--out-dir", str(tmp_path), "--paths", "1"])
    assert rc == 2
    assert "--paths" in capsys.readouterr().err


def test_check_scenario_pass(capsys):
    rc = main(["check", "ra_low"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "PASS profile:" in out
    assert "PASS compatibility:" in out
    assert "FAIL" not in out


def test_check_infeasible_scenario(tmp_path, capsys):
    cfg = tmp_path / "tight.cfg"
    cfg.write_text("order.max_pov = 0.05\n")
    rc = main(["check", str(cfg)])
    assert rc == 3
    assert "FAIL compatibility:" in capsys.readouterr().out


def test_check_kernel_csv(tmp_path, capsys):
    good = tmp_path / "good.csv"
    save_kernel_csv(np.array([[2.0, 1.0], [1.0, 2.0]]), good)
    assert main(["check", str(good)]) == 0
    assert "PASS kernel positive semidefinite" in capsys.readouterr().out

    bad = tmp_path / "bad.csv"
    save_kernel_csv(np.array([[1.0, 0.0], [0.0, -1.0]]), bad)
    assert main(["check", str(bad)]) == 2
    assert "FAIL kernel positive semidefinite" in capsys.readouterr().out


def test_check_missing_kernel_csv(tmp_path, capsys):
    rc = main(["check", str(tmp_path / "none.csv")])
    assert rc == 2
    assert "no such file" in capsys.readouterr().err


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "povsched.cli", "check", "ra_low"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "PASS compatibility" in proc.stdout

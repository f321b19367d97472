"""Command-line front end.

Subcommands:
    solve            scenario -> schedule.csv + summary.csv
    calibrate        trade DB + config -> coefficients.csv + filter_report.csv
    estimate-kernel  scenario -> Monte Carlo kernel.csv + psd_report.csv
    check            scenario or kernel CSV -> itemized validation report
    serve            run the HTTP service

Scenario arguments accept either a preset name (see
``povsched.scenario.PRESETS``) or a path to a flat key=value config
file. Exit codes: 0 success, 2 validation failure, 3 infeasible order,
4 solver non-convergence. Identical inputs and seeds produce
byte-identical output files.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

from .calibrate import calibrate_trades, load_trade_db
from .dynamics import (
    SDESpec,
    check_psd,
    mc_estimate_kernel_repair,
    read_kernel_csv,
    save_kernel_csv,
    simulate_paths,
)
from .errors import (
    ConvergenceError,
    InfeasibleError,
    PovschedError,
    ValidationError,
)
from .impact import execution_centroid, front_loading_index
from .scenario import (
    CALIBRATION_SCHEMA,
    PRESETS,
    Scenario,
    coerce_config,
    horizon_window,
    kernel_checks,
    parse_flat_config,
    scenario_checks,
    solve_scenario,
)

_EXIT_VALIDATION = 2
_EXIT_INFEASIBLE = 3
_EXIT_CONVERGENCE = 4


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _prepare_out_dir(arg: str) -> Path:
    out = Path(arg)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_scenario(ref: str, args: argparse.Namespace) -> Scenario:
    sc = Scenario.load(ref)
    if getattr(args, "seed", None) is not None:
        sc.mc_seed = args.seed
    if getattr(args, "paths", None) is not None:
        if args.paths < 2:
            raise ValidationError(f"--paths must be at least 2, got {args.paths}")
        sc.mc_paths = args.paths
    if getattr(args, "tol", None) is not None:
        if not (args.tol > 0):
            raise ValidationError(f"--tol must be positive, got {args.tol}")
        sc.settings = replace(sc.settings, tol_kkt=args.tol)
    return sc


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def cmd_solve(args: argparse.Namespace) -> int:
    sc = _load_scenario(args.scenario, args)
    schedule, solution, mat = solve_scenario(sc)
    out = _prepare_out_dir(args.out_dir)

    starts = mat.window.grid.boundaries[:-1]
    rows = [
        [
            _fmt(starts[n]),
            _fmt(mat.window.d[n]),
            _fmt(schedule.h[n]),
            _fmt(schedule.shares[n]),
            _fmt(schedule.x_cum[n]),
            _fmt(sc.order.max_pov),
        ]
        for n in range(mat.window.grid.n)
    ]
    _write_csv(out / "schedule.csv", ["minute", "d_n", "h_n", "shares", "X_cum", "maxPoV"], rows)

    comp = schedule.components
    summary = [
        ["status", solution.status],
        ["iterations", str(solution.iterations)],
        ["objective_dollar", _fmt(schedule.objective_value)],
        ["expected_is_bps", _fmt(schedule.expected_is_bps)],
        ["spread_bps", _fmt(comp.spread_bps)],
        ["instantaneous_bps", _fmt(comp.instantaneous_bps)],
        ["transient_bps", _fmt(comp.transient_bps)],
        ["permanent_bps", _fmt(comp.permanent_bps)],
        ["stdev_is_bps", _fmt(schedule.stdev_is_bps)],
        ["variance_is_dollar", _fmt(schedule.variance_is_dollar)],
        ["kkt_stationarity", _fmt(solution.kkt.stationarity)],
        ["kkt_equality", _fmt(solution.kkt.equality)],
        ["kkt_bound_violation", _fmt(solution.kkt.bound_violation)],
        ["kkt_complementarity", _fmt(solution.kkt.complementarity)],
        ["execution_centroid_min", _fmt(execution_centroid(schedule))],
        ["front_loading_index", _fmt(front_loading_index(schedule))],
        ["risk_aversion", _fmt(sc.order.risk_aversion)],
        ["x1_shares", _fmt(sc.order.x1)],
        ["v1_shares", _fmt(mat.window.v1)],
        ["max_pov", _fmt(sc.order.max_pov)],
        ["required_pov", _fmt(abs(sc.order.x1) / mat.window.v1)],
        ["mc_clipped_eigenvalues", str(mat.mc_clipped)],
        ["mc_clipped_mass", _fmt(mat.mc_clipped_mass)],
    ]
    _write_csv(out / "summary.csv", ["key", "value"], [list(r) for r in summary])

    print(
        f"wrote {out / 'schedule.csv'} and {out / 'summary.csv'} "
        f"(status {solution.status}, E[IS] {schedule.expected_is_bps:.4f} bps, "
        f"stdev {schedule.stdev_is_bps:.4f} bps)"
    )
    if solution.status != "optimal":
        print(
            f"error: solver stopped at status {solution.status!r} after "
            f"{solution.iterations} iterations: {solution.message}",
            file=sys.stderr,
        )
        return _EXIT_CONVERGENCE
    return 0


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def cmd_calibrate(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        raise ValidationError(f"calibration config {config_path} does not exist")
    raw = parse_flat_config(config_path.read_text(), source=str(config_path))
    cfg = coerce_config(raw, CALIBRATION_SCHEMA, source=str(config_path))

    trades, load_rejects = load_trade_db(args.db)
    report = calibrate_trades(
        trades,
        v_star=float(cfg["impact.v_star"]),
        eps0=float(cfg["impact.eps0"]),
        theta_bps=float(cfg["spread.theta_bps"]),
        sigma0=float(cfg["dynamics.sigma0"]),
        weight_floor=float(cfg["calibrate.weight_floor"]),
        permanent_hard=bool(cfg["impact.permanent_hard"]),
    )
    out = _prepare_out_dir(args.out_dir)

    result = report.result
    names = ["alpha0", "alpha1", "alpha2", "alpha3"]
    _write_csv(
        out / "coefficients.csv",
        ["coefficient", "estimate", "std_error"],
        [[names[i], _fmt(result.alpha[i]), _fmt(result.stderr[i])] for i in range(4)],
    )
    excluded = list(load_rejects) + list(report.skipped)
    _write_csv(
        out / "filter_report.csv",
        ["trade_id", "reason"],
        [[trade_id, reason] for trade_id, reason in excluded],
    )
    _write_csv(
        out / "fit_summary.csv",
        ["key", "value"],
        [
            ["n_trades_loaded", str(len(trades))],
            ["n_trades_used", str(result.n_trades)],
            ["n_trades_excluded", str(len(excluded))],
            ["r_squared", _fmt(result.r_squared)],
        ],
    )
    print(
        f"wrote {out / 'coefficients.csv'} ({result.n_trades} trades used, "
        f"{len(excluded)} excluded, r^2 {result.r_squared:.4f})"
    )
    return 0


# ---------------------------------------------------------------------------
# estimate-kernel
# ---------------------------------------------------------------------------


def _sde_spec(sc: Scenario) -> SDESpec:
    model = sc.dynamics_model
    if model == "brownian":
        return SDESpec(model="brownian", sigma0=sc.dynamics_sigma0)
    if model == "mean_reversion":
        return SDESpec(model="mean_reversion", kappa=sc.dynamics_kappa, alpha=sc.dynamics_alpha)
    if model == "asv":
        return SDESpec(
            model="asv", sigma0=sc.dynamics_sigma0, beta=sc.dynamics_beta, cap=sc.dynamics_cap
        )
    raise ValidationError(
        "dynamics.model = kernel_csv references an already-estimated kernel; "
        "pick brownian, mean_reversion or asv to simulate"
    )


def cmd_estimate_kernel(args: argparse.Namespace) -> int:
    sc = _load_scenario(args.config, args)
    spec = _sde_spec(sc)
    window = horizon_window(sc)
    paths = simulate_paths(
        spec, window.grid, sc.mc_paths, substeps=sc.mc_substeps, seed=sc.mc_seed
    )
    kernel, n_clipped, clipped_mass = mc_estimate_kernel_repair(paths, sc.coeffs.p0)
    out = _prepare_out_dir(args.out_dir)
    save_kernel_csv(kernel, out / "kernel.csv")
    psd = check_psd(kernel)
    _write_csv(
        out / "psd_report.csv",
        ["key", "value"],
        [
            ["model", spec.model],
            ["paths", str(sc.mc_paths)],
            ["substeps", str(sc.mc_substeps)],
            ["seed", str(sc.mc_seed)],
            ["intervals", str(window.grid.n)],
            ["clipped_eigenvalues", str(n_clipped)],
            ["clipped_mass", _fmt(clipped_mass)],
            ["min_eigenvalue", _fmt(psd.min_eig)],
            ["max_eigenvalue", _fmt(psd.max_eig)],
        ],
    )
    print(
        f"wrote {out / 'kernel.csv'} ({window.grid.n}x{window.grid.n}, {sc.mc_paths} paths, "
        f"{n_clipped} eigenvalues clipped)"
    )
    return 0


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def _report(checks: list[tuple[str, bool, str]]) -> None:
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


def cmd_check(args: argparse.Namespace) -> int:
    tol = args.tol if args.tol is not None else 1e-8
    if not (tol > 0):
        raise ValidationError(f"--tol must be positive, got {args.tol}")
    ref = args.path
    if ref not in PRESETS and ref.endswith(".csv"):
        if not Path(ref).exists():
            raise ValidationError(f"{ref}: no such file")
        checks = kernel_checks(read_kernel_csv(ref), tol)
        _report(checks)
        return 0 if all(ok for _, ok, _ in checks) else _EXIT_VALIDATION
    checks, infeasible = scenario_checks(_load_scenario(ref, args), tol)
    _report(checks)
    if all(ok for _, ok, _ in checks):
        return 0
    return _EXIT_INFEASIBLE if infeasible else _EXIT_VALIDATION


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="povsched",
        description="Optimal participation-of-volume schedules under impact and risk.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve a scenario and write schedule + summary CSVs")
    p_solve.add_argument("scenario", help="preset name or config file path")
    p_solve.add_argument("--out-dir", default="out", help="output directory (default: out)")
    p_solve.add_argument("--seed", type=int, default=None, help="override mc.seed")
    p_solve.add_argument("--paths", type=int, default=None, help="override mc.paths")
    p_solve.add_argument("--tol", type=float, default=None, help="override solver.tol_kkt")
    p_solve.set_defaults(func=cmd_solve)

    p_cal = sub.add_parser("calibrate", help="fit impact coefficients from a trade database")
    p_cal.add_argument("db", help="directory holding orders.csv and fills.csv")
    p_cal.add_argument("config", help="calibration config file path")
    p_cal.add_argument("--out-dir", default="out", help="output directory (default: out)")
    p_cal.set_defaults(func=cmd_calibrate)

    p_est = sub.add_parser(
        "estimate-kernel", help="Monte Carlo estimate of the price-risk kernel"
    )
    p_est.add_argument("config", help="preset name or config file path")
    p_est.add_argument("--out-dir", default="out", help="output directory (default: out)")
    p_est.add_argument("--seed", type=int, default=None, help="override mc.seed")
    p_est.add_argument("--paths", type=int, default=None, help="override mc.paths")
    p_est.set_defaults(func=cmd_estimate_kernel)

    p_check = sub.add_parser("check", help="validate a scenario or a kernel CSV")
    p_check.add_argument("path", help="preset name, config file path, or kernel CSV path")
    p_check.add_argument("--seed", type=int, default=None, help="override mc.seed")
    p_check.add_argument("--paths", type=int, default=None, help="override mc.paths")
    p_check.add_argument("--tol", type=float, default=None, help="check tolerance (default 1e-8)")
    p_check.set_defaults(func=cmd_check)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PovschedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, InfeasibleError):
            return _EXIT_INFEASIBLE
        if isinstance(exc, ConvergenceError):
            return _EXIT_CONVERGENCE
        return _EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

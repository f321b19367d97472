"""Scenario assembly: flat key=value configs -> a ready-to-solve QP.

A scenario bundles everything one solve needs: the order, cost
coefficients, volume and spread sources, price dynamics, Monte Carlo
controls and solver settings. Config files are flat text with dotted
keys (``order.x1 = 90000``), ``#`` comments and no sections; the same
mapping format backs the bundled presets, so a preset is exactly a
config file shipped in code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (
    KernelMatrix,
    SDESpec,
    brownian_kernel,
    mc_estimate_kernel_repair,
    mean_reversion_kernel,
    read_kernel_csv,
    simulate_paths,
)
from .errors import InfeasibleError, PovschedError, ValidationError
from .impact import (
    CostCoefficients,
    ExecutionOrder,
    QPProblem,
    Schedule,
    assemble_qp,
    combined_operator,
    evaluate_schedule,
    permanent_kernel,
    transient_kernel,
)
from .profiles import (
    SpreadProfile,
    VolumeProfile,
    build_uniform_grid,
    constant_spread,
    load_profile,
    slice_horizon,
    slice_spread,
    synth_u_shape_volume,
)
from .qpsolve import QPSolution, SolverSettings, solve
from .units import BPS

# ---------------------------------------------------------------------------
# Config schema
#
# Every recognized key with its coercion type and baseline default.
# The defaults ARE the baseline experiment: a 90,000-share buy over the
# noon trough of a smile-shaped 5M-share day at $30, 20% participation
# cap, moderate risk aversion, Brownian price noise.
# ---------------------------------------------------------------------------

_SCHEMA: dict[str, tuple[type, object]] = {
    "order.x1": (float, 90000.0),
    "order.t0": (float, 150.0),
    "order.t1": (float, 240.0),
    "order.max_pov": (float, 0.20),
    "order.risk_aversion": (float, 1e-3),
    "price.p0": (float, 30.0),
    "coeffs.alpha0": (float, 0.35),
    "coeffs.alpha1": (float, 8.0),
    "coeffs.alpha2": (float, 5.0),
    "coeffs.alpha3": (float, 3.0),
    "impact.v_star": (float, 50000.0),
    "impact.eps0": (float, 50000.0),
    "impact.permanent_hard": (bool, False),
    "impact.prior_volume": (float, 0.0),
    "profile.kind": (str, "u_shape"),
    "profile.adv": (float, 5e6),
    "profile.skew": (float, 0.5),
    "profile.day_start": (float, 0.0),
    "profile.day_end": (float, 390.0),
    "profile.dt": (float, 1.0),
    "profile.csv": (str, ""),
    "spread.kind": (str, "constant"),
    "spread.theta_bps": (float, 5.5),
    "spread.csv": (str, ""),
    "dynamics.model": (str, "brownian"),
    "dynamics.sigma0": (float, 2e-4),
    "dynamics.kappa": (float, 0.05),
    "dynamics.alpha": (float, 6e-4),
    "dynamics.beta": (float, 150.0),
    "dynamics.cap": (float, 2.0),
    "dynamics.kernel_csv": (str, ""),
    "mc.paths": (int, 40000),
    "mc.substeps": (int, 10),
    "mc.seed": (int, 7),
    "solver.tol_kkt": (float, 1e-8),
    "solver.max_iter": (int, 0),
}

_PROFILE_KINDS = ("u_shape", "csv")
_SPREAD_KINDS = ("constant", "csv")
_DYNAMICS_MODELS = ("brownian", "mean_reversion", "asv", "kernel_csv")

# Calibration runs off the same file format but a much smaller key set.
CALIBRATION_SCHEMA: dict[str, tuple[type, object]] = {
    "impact.v_star": (float, 50000.0),
    "impact.eps0": (float, 50000.0),
    "impact.permanent_hard": (bool, False),
    "spread.theta_bps": (float, 5.5),
    "dynamics.sigma0": (float, 1e-5),
    "calibrate.weight_floor": (float, 1e-4),
}


def parse_flat_config(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines into a raw string mapping.

    Blank lines and ``#`` comments (whole-line or trailing) are
    ignored. Duplicate keys and lines without ``=`` are errors, named
    with their line number.
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ValidationError(f"{source}:{lineno}: empty key or value")
        if key in out:
            raise ValidationError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def coerce_config(
    raw: dict[str, str],
    schema: dict[str, tuple[type, object]],
    source: str = "<config>",
) -> dict[str, object]:
    """Check raw keys against a schema and coerce the values.

    Unknown keys are rejected (typos should fail loudly, not silently
    fall back to defaults). Missing keys take their defaults.
    """
    values: dict[str, object] = {key: default for key, (_, default) in schema.items()}
    for key, text_value in raw.items():
        if key not in schema:
            known = ", ".join(sorted(schema))
            raise ValidationError(f"{source}: unknown config key {key!r} (known keys: {known})")
        kind = schema[key][0]
        try:
            if kind is bool:
                lowered = text_value.lower()
                if lowered not in ("true", "false"):
                    raise ValueError
                values[key] = lowered == "true"
            elif kind is int:
                values[key] = int(text_value)
            elif kind is float:
                values[key] = float(text_value)
            else:
                values[key] = text_value
        except ValueError:
            raise ValidationError(
                f"{source}: key {key!r} expects {kind.__name__}, got {text_value!r}"
            ) from None
    return values


# ---------------------------------------------------------------------------
# Presets: the shipped experiment families. Each entry is a set of
# overrides on the schema defaults, so loading a preset and loading an
# equivalent config file produce identical scenarios.
# ---------------------------------------------------------------------------

PRESETS: dict[str, dict[str, str]] = {
    # risk-aversion ladder over the noon window
    "ra_low": {"order.risk_aversion": "1e-5"},
    "ra_medium": {"order.risk_aversion": "1e-3"},
    "ra_high": {"order.risk_aversion": "1e-1"},
    # same order dropped into different parts of the volume smile
    "vol_noon": {},
    "vol_morning": {"order.t0": "0", "order.t1": "90"},
    "vol_afternoon": {"order.t0": "300", "order.t1": "390"},
    # one cost component boosted x10; risk aversion low enough that the
    # cost shape, not the variance, drives the schedule
    "boost_inst": {"coeffs.alpha1": "80", "order.risk_aversion": "1e-5"},
    "boost_tran": {"coeffs.alpha2": "50", "order.risk_aversion": "1e-5"},
    "boost_perm": {"coeffs.alpha3": "30", "order.risk_aversion": "1e-5"},
    # alternative price dynamics
    "dyn_mr": {
        "dynamics.model": "mean_reversion",
        "dynamics.kappa": "0.05",
        "dynamics.alpha": "6e-4",
    },
    "dyn_asv": {
        "dynamics.model": "asv",
        "dynamics.beta": "150",
        "dynamics.cap": "2.0",
        "order.risk_aversion": "1e-4",
    },
}


@dataclass(eq=False)
class Scenario:
    """A fully resolved solve parameterization.

    Construct with `from_mapping`, `from_file` or `from_preset`; the
    raw dict form keeps one source of truth for defaults and lets the
    service, CLI and tests share the exact same loading path.
    """

    order: ExecutionOrder
    coeffs: CostCoefficients
    permanent_hard: bool
    prior_volume: float
    profile_kind: str
    profile_adv: float
    profile_skew: float
    profile_day_start: float
    profile_day_end: float
    profile_dt: float
    profile_csv: str
    spread_kind: str
    spread_theta_bps: float
    spread_csv: str
    dynamics_model: str
    dynamics_sigma0: float
    dynamics_kappa: float
    dynamics_alpha: float
    dynamics_beta: float
    dynamics_cap: float
    dynamics_kernel_csv: str
    mc_paths: int
    mc_substeps: int
    mc_seed: int
    settings: SolverSettings

    @classmethod
    def from_mapping(cls, raw: dict[str, str], source: str = "<config>") -> "Scenario":
        cfg = coerce_config(raw, _SCHEMA, source)
        if cfg["profile.kind"] not in _PROFILE_KINDS:
            raise ValidationError(
                f"{source}: profile.kind must be one of {_PROFILE_KINDS}, got {cfg['profile.kind']!r}"
            )
        if cfg["spread.kind"] not in _SPREAD_KINDS:
            raise ValidationError(
                f"{source}: spread.kind must be one of {_SPREAD_KINDS}, got {cfg['spread.kind']!r}"
            )
        if cfg["dynamics.model"] not in _DYNAMICS_MODELS:
            raise ValidationError(
                f"{source}: dynamics.model must be one of {_DYNAMICS_MODELS}, "
                f"got {cfg['dynamics.model']!r}"
            )
        if cfg["profile.kind"] == "csv" and not cfg["profile.csv"]:
            raise ValidationError(f"{source}: profile.kind = csv needs profile.csv")
        if cfg["spread.kind"] == "csv" and not cfg["spread.csv"]:
            raise ValidationError(f"{source}: spread.kind = csv needs spread.csv")
        if cfg["dynamics.model"] == "kernel_csv" and not cfg["dynamics.kernel_csv"]:
            raise ValidationError(f"{source}: dynamics.model = kernel_csv needs dynamics.kernel_csv")
        if cfg["mc.paths"] < 2:
            raise ValidationError(f"{source}: mc.paths must be at least 2, got {cfg['mc.paths']}")
        if cfg["mc.substeps"] < 1:
            raise ValidationError(f"{source}: mc.substeps must be at least 1")
        order = ExecutionOrder(
            x1=cfg["order.x1"],
            t0=cfg["order.t0"],
            t1=cfg["order.t1"],
            max_pov=cfg["order.max_pov"],
            risk_aversion=cfg["order.risk_aversion"],
        )
        coeffs = CostCoefficients(
            alpha0_norm=cfg["coeffs.alpha0"],
            alpha1_norm=cfg["coeffs.alpha1"],
            alpha2_norm=cfg["coeffs.alpha2"],
            alpha3_norm=cfg["coeffs.alpha3"],
            v_star=cfg["impact.v_star"],
            eps0=cfg["impact.eps0"],
            p0=cfg["price.p0"],
        )
        max_iter = cfg["solver.max_iter"]
        settings = SolverSettings(
            tol_kkt=cfg["solver.tol_kkt"],
            max_iter=None if max_iter == 0 else int(max_iter),
        )
        return cls(
            order=order,
            coeffs=coeffs,
            permanent_hard=cfg["impact.permanent_hard"],
            prior_volume=cfg["impact.prior_volume"],
            profile_kind=cfg["profile.kind"],
            profile_adv=cfg["profile.adv"],
            profile_skew=cfg["profile.skew"],
            profile_day_start=cfg["profile.day_start"],
            profile_day_end=cfg["profile.day_end"],
            profile_dt=cfg["profile.dt"],
            profile_csv=cfg["profile.csv"],
            spread_kind=cfg["spread.kind"],
            spread_theta_bps=cfg["spread.theta_bps"],
            spread_csv=cfg["spread.csv"],
            dynamics_model=cfg["dynamics.model"],
            dynamics_sigma0=cfg["dynamics.sigma0"],
            dynamics_kappa=cfg["dynamics.kappa"],
            dynamics_alpha=cfg["dynamics.alpha"],
            dynamics_beta=cfg["dynamics.beta"],
            dynamics_cap=cfg["dynamics.cap"],
            dynamics_kernel_csv=cfg["dynamics.kernel_csv"],
            mc_paths=cfg["mc.paths"],
            mc_substeps=cfg["mc.substeps"],
            mc_seed=cfg["mc.seed"],
            settings=settings,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"scenario config {p} does not exist")
        return cls.from_mapping(parse_flat_config(p.read_text(), source=str(p)), source=str(p))

    @classmethod
    def from_preset(cls, name: str) -> "Scenario":
        if name not in PRESETS:
            known = ", ".join(sorted(PRESETS))
            raise ValidationError(f"unknown preset {name!r} (available: {known})")
        return cls.from_mapping(dict(PRESETS[name]), source=f"preset:{name}")

    @classmethod
    def load(cls, ref: str | Path) -> "Scenario":
        """Accept either a preset name or a config file path."""
        if isinstance(ref, str) and ref in PRESETS and not Path(ref).exists():
            return cls.from_preset(ref)
        return cls.from_file(ref)


@dataclass(eq=False)
class MaterializedScenario:
    """Concrete arrays for one scenario: profiles, kernels and the QP."""

    scenario: Scenario
    day: VolumeProfile
    window: VolumeProfile
    spread: SpreadProfile
    risk_kernel: KernelMatrix
    transient: KernelMatrix
    permanent: KernelMatrix
    problem: QPProblem
    mc_clipped: int = 0
    mc_clipped_mass: float = 0.0


def _day_profile(sc: Scenario) -> VolumeProfile:
    if sc.profile_kind == "csv":
        profile = load_profile(sc.profile_csv)
        if not isinstance(profile, VolumeProfile):
            raise ValidationError(f"{sc.profile_csv} is not a volume profile")
        return profile
    grid = build_uniform_grid(sc.profile_day_start, sc.profile_day_end, sc.profile_dt)
    return synth_u_shape_volume(grid, sc.profile_adv, sc.profile_skew)


def horizon_window(sc: Scenario) -> VolumeProfile:
    """The scenario's volume profile restricted to the order horizon."""
    return slice_horizon(_day_profile(sc), sc.order.t0, sc.order.t1)


def _window_spread(sc: Scenario, window: VolumeProfile) -> SpreadProfile:
    if sc.spread_kind == "csv":
        day_spread = load_profile(sc.spread_csv)
        if not isinstance(day_spread, SpreadProfile):
            raise ValidationError(f"{sc.spread_csv} is not a spread profile")
        sliced = slice_spread(day_spread, sc.order.t0, sc.order.t1)
        if not sliced.grid.matches(window.grid):
            raise ValidationError("spread CSV grid does not match the volume grid on the horizon")
        return sliced
    return constant_spread(window.grid, sc.spread_theta_bps * sc.coeffs.p0 * BPS)


def price_risk_kernel(sc: Scenario, window: VolumeProfile) -> tuple[KernelMatrix, int, float]:
    """Risk kernel for the scenario's dynamics on the horizon grid.

    Brownian and mean-reversion use their closed forms; asv estimates
    by Monte Carlo (deterministic in mc.seed); kernel_csv loads an
    externally estimated matrix. Returns the kernel plus PSD-repair
    numbers (nonzero only for the Monte Carlo route).
    """
    grid = window.grid
    model = sc.dynamics_model
    if model == "brownian":
        return brownian_kernel(grid, sc.dynamics_sigma0, sc.coeffs.p0), 0, 0.0
    if model == "mean_reversion":
        return (
            mean_reversion_kernel(grid, sc.dynamics_kappa, sc.dynamics_alpha, sc.coeffs.p0),
            0,
            0.0,
        )
    if model == "asv":
        spec = SDESpec(
            model="asv", sigma0=sc.dynamics_sigma0, beta=sc.dynamics_beta, cap=sc.dynamics_cap
        )
        paths = simulate_paths(
            spec, grid, sc.mc_paths, substeps=sc.mc_substeps, seed=sc.mc_seed
        )
        return mc_estimate_kernel_repair(paths, sc.coeffs.p0)
    values = read_kernel_csv(sc.dynamics_kernel_csv)
    if values.shape != (grid.n, grid.n):
        raise ValidationError(
            f"kernel {sc.dynamics_kernel_csv} is {values.shape[0]}x{values.shape[1]} "
            f"but the horizon has {grid.n} intervals"
        )
    return KernelMatrix(grid, values, kind="price_risk"), 0, 0.0


def materialize(sc: Scenario) -> MaterializedScenario:
    """Resolve a scenario into profiles, kernels and an assembled QP."""
    day = _day_profile(sc)
    window = slice_horizon(day, sc.order.t0, sc.order.t1)
    spread = _window_spread(sc, window)
    risk, n_clipped, clipped_mass = price_risk_kernel(sc, window)
    tran = transient_kernel(window, sc.coeffs.v_star)
    perm = permanent_kernel(
        window, sc.coeffs.eps0, hard=sc.permanent_hard, prior_volume=sc.prior_volume
    )
    operator = combined_operator(tran, perm, risk, sc.coeffs, sc.order.risk_aversion)
    problem = assemble_qp(sc.order, window, spread, sc.coeffs, operator)
    return MaterializedScenario(
        scenario=sc,
        day=day,
        window=window,
        spread=spread,
        risk_kernel=risk,
        transient=tran,
        permanent=perm,
        problem=problem,
        mc_clipped=n_clipped,
        mc_clipped_mass=clipped_mass,
    )


def solve_scenario(
    sc: Scenario,
    start: np.ndarray | None = None,
) -> tuple[Schedule, QPSolution, MaterializedScenario]:
    """Materialize, solve and price a scenario in one call."""
    mat = materialize(sc)
    solution = solve(mat.problem, settings=sc.settings, start=start)
    schedule = evaluate_schedule(
        solution.h,
        sc.order,
        mat.window,
        mat.spread,
        sc.coeffs,
        mat.risk_kernel,
        permanent_hard=sc.permanent_hard,
        prior_volume=sc.prior_volume,
    )
    return schedule, solution, mat


# ---------------------------------------------------------------------------
# Validation reports (shared by `povsched check` and the HTTP service)
# ---------------------------------------------------------------------------

CheckItem = tuple[str, bool, str]


def kernel_checks(values: np.ndarray, tol: float = 1e-8) -> list[CheckItem]:
    """Symmetry and PSD report for a raw kernel matrix."""
    from .dynamics import check_psd, max_asymmetry

    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValidationError(f"kernel must be square, got shape {values.shape}")
    checks: list[CheckItem] = []
    n = values.shape[0]
    finite = bool(np.all(np.isfinite(values)))
    checks.append(("kernel shape", finite, f"{n}x{n}, entries finite" if finite else f"{n}x{n}, non-finite entries"))
    dev, i, j = max_asymmetry(values)
    scale = max(1.0, float(np.max(np.abs(values)))) if finite else 1.0
    checks.append(
        (
            "kernel symmetry",
            dev <= tol * scale,
            f"max |K[i,j] - K[j,i]| = {dev:.6g} at ({i},{j}), tolerance {tol * scale:.6g}",
        )
    )
    psd = check_psd(0.5 * (values + values.T), tol=tol)
    checks.append(
        (
            "kernel positive semidefinite",
            psd.passed,
            f"min eigenvalue {psd.min_eig:.6g}, max {psd.max_eig:.6g}, tolerance {tol:g}",
        )
    )
    return checks


def scenario_checks(sc: Scenario, tol: float = 1e-8) -> tuple[list[CheckItem], bool]:
    """Itemized profile/spread/kernel/compatibility report.

    Returns (checks, infeasible): infeasible is True exactly when the
    order cannot complete under its participation cap, which callers
    treat differently from plain validation failures.
    """
    from .dynamics import check_psd, max_asymmetry

    checks: list[CheckItem] = []
    try:
        mat = materialize(sc)
    except InfeasibleError as exc:
        window = horizon_window(sc)
        checks.append(("profile", True, f"{window.grid.n} intervals, V1 = {window.v1:.6g} shares"))
        checks.append(("compatibility", False, str(exc)))
        return checks, True
    except PovschedError as exc:
        checks.append(("scenario build", False, str(exc)))
        return checks, False

    window = mat.window
    d_ok = bool(np.all(np.isfinite(window.d)) and np.all(window.d >= 0) and window.v1 > 0)
    checks.append(
        (
            "profile",
            d_ok,
            f"{window.grid.n} intervals over [{window.grid.t_start:g}, {window.grid.t_end:g}] min, "
            f"V1 = {window.v1:.6g} shares, volumes nonnegative",
        )
    )
    theta = mat.spread.theta_bar
    s_ok = bool(np.all(np.isfinite(theta)) and np.all(theta >= 0))
    checks.append(
        ("spread", s_ok, f"theta in [{theta.min():.6g}, {theta.max():.6g}] currency, nonnegative")
    )
    for name, kernel in (
        ("risk kernel", mat.risk_kernel),
        ("transient kernel", mat.transient),
        ("permanent kernel", mat.permanent),
    ):
        dev, i, j = max_asymmetry(kernel.values)
        checks.append((f"{name} symmetry", True, f"max asymmetry {dev:.6g} at ({i},{j})"))
        psd = check_psd(kernel, tol=tol)
        checks.append(
            (
                f"{name} positive semidefinite",
                psd.passed,
                f"min eigenvalue {psd.min_eig:.6g}, max {psd.max_eig:.6g}, tolerance {tol:g}",
            )
        )
    required = abs(sc.order.x1) / window.v1
    compat_ok = bool(sc.order.max_pov * window.v1 >= abs(sc.order.x1) - 1e-9)
    checks.append(
        (
            "compatibility",
            compat_ok,
            f"required participation |X1|/V1 = {required:.6g} vs max_pov = {sc.order.max_pov:g}",
        )
    )
    return checks, not compat_ok

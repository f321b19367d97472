"""FastAPI wrapper around the scheduling core.

Endpoints mirror the CLI subcommands: POST /solve, /calibrate,
/estimate-kernel and /check, plus GET /presets and /health. Domain
errors map onto HTTP statuses: validation 400, infeasible order 409,
solver non-convergence 500.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..calibrate import calibrate_trades, trade_from_fills
from ..errors import (
    ConvergenceError,
    InfeasibleError,
    PovschedError,
    ValidationError,
)
from ..dynamics import SDESpec, check_psd, mc_estimate_kernel_repair, simulate_paths
from ..impact import execution_centroid, front_loading_index
from ..scenario import (
    CALIBRATION_SCHEMA,
    PRESETS,
    Scenario,
    coerce_config,
    horizon_window,
    kernel_checks,
    scenario_checks,
    solve_scenario,
)
from .schemas import (
    CalibrateRequest,
    CalibrateResponse,
    CheckItem,
    CheckRequest,
    CheckResponse,
    CoefficientEstimate,
    CostBreakdownModel,
    EstimateKernelResponse,
    ExcludedTrade,
    HealthResponse,
    KKTModel,
    PresetsResponse,
    ScenarioRequest,
    SolveResponse,
)


def _scenario_from_request(req: ScenarioRequest | CheckRequest) -> Scenario:
    mapping: dict[str, str] = {}
    if req.preset is not None:
        if req.preset not in PRESETS:
            known = ", ".join(sorted(PRESETS))
            raise ValidationError(f"unknown preset {req.preset!r} (available: {known})")
        mapping.update(PRESETS[req.preset])
    mapping.update(req.config)
    source = f"preset:{req.preset}" if req.preset else "<request>"
    sc = Scenario.from_mapping(mapping, source=source)
    if req.seed is not None:
        sc.mc_seed = req.seed
    if req.paths is not None:
        if req.paths < 2:
            raise ValidationError(f"paths must be at least 2, got {req.paths}")
        sc.mc_paths = req.paths
    return sc


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


def create_app() -> FastAPI:
    app = FastAPI(
        title="povsched",
        version=__version__,
        description="Optimal participation-of-volume schedules under impact and risk.",
    )

    @app.exception_handler(PovschedError)
    async def domain_error_handler(request: Request, exc: PovschedError) -> JSONResponse:
        if isinstance(exc, InfeasibleError):
            status = 409
        elif isinstance(exc, ConvergenceError):
            status = 500
        else:
            status = 400
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.get("/presets", response_model=PresetsResponse)
    def presets() -> PresetsResponse:
        return PresetsResponse(presets={name: dict(cfg) for name, cfg in PRESETS.items()})

    @app.post("/solve", response_model=SolveResponse)
    def solve_endpoint(req: ScenarioRequest) -> SolveResponse:
        sc = _scenario_from_request(req)
        schedule, solution, mat = solve_scenario(sc)
        if solution.status != "optimal":
            raise ConvergenceError(
                f"solver stopped at status {solution.status!r} after "
                f"{solution.iterations} iterations: {solution.message}"
            )
        comp = schedule.components
        return SolveResponse(
            status=solution.status,
            iterations=solution.iterations,
            objective_dollar=schedule.objective_value,
            expected_is_bps=schedule.expected_is_bps,
            stdev_is_bps=schedule.stdev_is_bps,
            variance_is_dollar=schedule.variance_is_dollar,
            components=CostBreakdownModel(
                spread_bps=comp.spread_bps,
                instantaneous_bps=comp.instantaneous_bps,
                transient_bps=comp.transient_bps,
                permanent_bps=comp.permanent_bps,
                total_bps=comp.total_bps,
            ),
            kkt=KKTModel(
                stationarity=solution.kkt.stationarity,
                equality=solution.kkt.equality,
                bound_violation=solution.kkt.bound_violation,
                complementarity=solution.kkt.complementarity,
            ),
            minute=mat.window.grid.boundaries[:-1].tolist(),
            d_n=mat.window.d.tolist(),
            h_n=schedule.h.tolist(),
            shares=schedule.shares.tolist(),
            x_cum=schedule.x_cum.tolist(),
            max_pov=sc.order.max_pov,
            v1_shares=mat.window.v1,
            required_pov=abs(sc.order.x1) / mat.window.v1,
            execution_centroid_min=execution_centroid(schedule),
            front_loading_index=front_loading_index(schedule),
            mc_clipped_eigenvalues=mat.mc_clipped,
            mc_clipped_mass=mat.mc_clipped_mass,
        )

    @app.post("/calibrate", response_model=CalibrateResponse)
    def calibrate_endpoint(req: CalibrateRequest) -> CalibrateResponse:
        cfg = coerce_config(req.config, CALIBRATION_SCHEMA, source="<request>")
        fills_by_trade: dict[str, list] = {}
        for row in req.fills:
            fills_by_trade.setdefault(row.trade_id, []).append(row)
        trades = []
        rejects: list[tuple[str, str]] = []
        for order in req.orders:
            rows = fills_by_trade.get(order.trade_id)
            try:
                if not rows:
                    raise ValidationError("no fills")
                trades.append(
                    trade_from_fills(
                        order.trade_id,
                        order.x1,
                        order.side,
                        order.p0,
                        order.is_bps,
                        np.array([r.minute for r in rows]),
                        np.array([r.d_n for r in rows]),
                        np.array([r.h_n for r in rows]),
                    )
                )
            except ValidationError as exc:
                rejects.append((order.trade_id, str(exc)))
        known = {o.trade_id for o in req.orders}
        for trade_id in fills_by_trade:
            if trade_id not in known:
                rejects.append((trade_id, "fills without an order row"))
        report = calibrate_trades(
            trades,
            v_star=float(cfg["impact.v_star"]),
            eps0=float(cfg["impact.eps0"]),
            theta_bps=float(cfg["spread.theta_bps"]),
            sigma0=float(cfg["dynamics.sigma0"]),
            weight_floor=float(cfg["calibrate.weight_floor"]),
            permanent_hard=bool(cfg["impact.permanent_hard"]),
        )
        result = report.result
        names = ["alpha0", "alpha1", "alpha2", "alpha3"]
        excluded = rejects + list(report.skipped)
        return CalibrateResponse(
            coefficients=[
                CoefficientEstimate(
                    coefficient=names[i],
                    estimate=float(result.alpha[i]),
                    std_error=float(result.stderr[i]),
                )
                for i in range(4)
            ],
            n_trades_used=result.n_trades,
            r_squared=result.r_squared,
            excluded=[ExcludedTrade(trade_id=t, reason=r) for t, r in excluded],
        )

    @app.post("/estimate-kernel", response_model=EstimateKernelResponse)
    def estimate_kernel_endpoint(req: ScenarioRequest) -> EstimateKernelResponse:
        sc = _scenario_from_request(req)
        spec = _sde_spec(sc)
        window = horizon_window(sc)
        paths = simulate_paths(
            spec, window.grid, sc.mc_paths, substeps=sc.mc_substeps, seed=sc.mc_seed
        )
        kernel, n_clipped, clipped_mass = mc_estimate_kernel_repair(paths, sc.coeffs.p0)
        psd = check_psd(kernel)
        return EstimateKernelResponse(
            model=spec.model,
            paths=sc.mc_paths,
            substeps=sc.mc_substeps,
            seed=sc.mc_seed,
            intervals=window.grid.n,
            values=kernel.values.tolist(),
            clipped_eigenvalues=n_clipped,
            clipped_mass=clipped_mass,
            min_eigenvalue=psd.min_eig,
            max_eigenvalue=psd.max_eig,
        )

    @app.post("/check", response_model=CheckResponse)
    def check_endpoint(req: CheckRequest) -> CheckResponse:
        if req.kernel is not None:
            checks = kernel_checks(np.asarray(req.kernel, dtype=float), req.tol)
            infeasible = False
        else:
            checks, infeasible = scenario_checks(_scenario_from_request(req), req.tol)
        return CheckResponse(
            passed=all(ok for _, ok, _ in checks),
            infeasible=infeasible,
            checks=[CheckItem(name=n, passed=ok, detail=d) for n, ok, d in checks],
        )

    return app


app = create_app()

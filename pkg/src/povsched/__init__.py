"""Pre-trade participation-of-volume scheduling.

Core pipeline: build a horizon volume/spread profile, pick a price-risk
kernel (closed form or Monte Carlo estimated), assemble the impact-cost
QP and solve it; calibrate the cost coefficients from realized trades.
"""

from .calibrate import (
    CalibrationReport,
    CalibrationResult,
    TradeRecord,
    calibrate_trades,
    compute_features,
    synth_trades,
    trade_weight,
    wls_fit,
)
from .dynamics import (
    KernelMatrix,
    PathEnsemble,
    SDESpec,
    brownian_kernel,
    check_psd,
    combined_risk_kernel,
    mc_estimate_kernel,
    mean_reversion_kernel,
    simulate_paths,
)
from .errors import (
    CalibrationError,
    ConvergenceError,
    InfeasibleError,
    PovschedError,
    ValidationError,
)
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
    TimeGrid,
    VolumeProfile,
    build_uniform_grid,
    load_profile,
    slice_horizon,
    synth_u_shape_volume,
)
from .qpsolve import QPSolution, SolverSettings, brute_force_oracle, kkt_residuals, solve

__version__ = "0.1.0"

__all__ = [
    "BPS",
    "CalibrationError",
    "CalibrationReport",
    "CalibrationResult",
    "ConvergenceError",
    "CostCoefficients",
    "ExecutionOrder",
    "InfeasibleError",
    "KernelMatrix",
    "PathEnsemble",
    "PovschedError",
    "QPProblem",
    "QPSolution",
    "SDESpec",
    "Schedule",
    "SolverSettings",
    "SpreadProfile",
    "TimeGrid",
    "TradeRecord",
    "ValidationError",
    "VolumeProfile",
    "assemble_qp",
    "brownian_kernel",
    "brute_force_oracle",
    "build_uniform_grid",
    "calibrate_trades",
    "check_psd",
    "combined_operator",
    "combined_risk_kernel",
    "compute_features",
    "evaluate_schedule",
    "kkt_residuals",
    "load_profile",
    "mc_estimate_kernel",
    "mean_reversion_kernel",
    "permanent_kernel",
    "simulate_paths",
    "slice_horizon",
    "solve",
    "synth_trades",
    "synth_u_shape_volume",
    "trade_weight",
    "transient_kernel",
    "wls_fit",
]

from .units import BPS  # noqa: E402  (re-export)

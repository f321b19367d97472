"""Execution-cost model and QP assembly.

The decision variable is the participation-of-volume vector H: h_n is
the signed ratio of our executed shares to market volume in interval n,
so the shares executed there are h_n * d_n. Expected implementation
shortfall has four parts, each scaled by a normalized coefficient
alpha_i (bps of arrival price per unit of its driver):

  spread          alpha0 * side * theta_bar      paid on every share
  instantaneous   alpha1 * h                     self-inflicted, local
  transient       alpha2, exponential decay in cumulative-volume
                  distance with window v_star
  permanent       alpha3 * X_t / (V_t + eps0)    information footprint

With a risk weight on the execution-price variance this becomes the
quadratic program

    minimize  c' H + H' Q H
    s.t.      sum_n d_n h_n = X1,   0 <= side * h_n <= maxPoV,
              h_n = 0 where d_n = 0,

where c_n = d_n * alpha0 * side * theta_bar at the interval midpoint,
Q = alpha1 * D + D * Op * D, D = diag(d), and Op folds the transient
and permanent kernels (each at half weight, since the quadratic form
double-counts ordered pairs) together with risk_aversion times the
price-risk kernel. Note the convention: the quadratic term carries no
extra 1/2, so Q enters the objective as H' Q H, not (1/2) H' Q H.

Normalized coefficients convert to currency per share via
alpha_i_dollar = alpha_i_norm * p0 * BPS (the spread coefficient
alpha0 is dimensionless and multiplies the currency spread level
directly).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import KernelMatrix, save_kernel_csv
from .errors import InfeasibleError, ValidationError
from .profiles import SpreadProfile, TimeGrid, VolumeProfile
from .units import BPS

__all__ = [
    "CostCoefficients",
    "ExecutionOrder",
    "QPProblem",
    "CostBreakdown",
    "Schedule",
    "transient_kernel",
    "permanent_kernel",
    "combined_operator",
    "assemble_qp",
    "evaluate_schedule",
    "execution_centroid",
    "front_loading_index",
    "export_qp_bundle",
]


@dataclass(frozen=True)
class CostCoefficients:
    """Normalized impact coefficients plus their scale parameters.

    alpha0_norm .. alpha3_norm are the calibrated, price-homogenized
    coefficients; v_star is the transient decay window and eps0 the
    permanent-impact regularizer, both in shares (1% of ADV is the
    usual choice for each); p0 is the arrival price.
    """

    alpha0_norm: float
    alpha1_norm: float
    alpha2_norm: float
    alpha3_norm: float
    v_star: float
    eps0: float
    p0: float

    def __post_init__(self) -> None:
        for name in ("alpha0_norm", "alpha2_norm", "alpha3_norm"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not (self.alpha1_norm > 0):
            raise ValidationError(
                f"alpha1_norm must be strictly positive (it is the convexity floor), "
                f"got {self.alpha1_norm}"
            )
        for name in ("v_star", "eps0", "p0"):
            if not (getattr(self, name) > 0):
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def alpha1_dollar(self) -> float:
        return self.alpha1_norm * self.p0 * BPS

    @property
    def alpha2_dollar(self) -> float:
        return self.alpha2_norm * self.p0 * BPS

    @property
    def alpha3_dollar(self) -> float:
        return self.alpha3_norm * self.p0 * BPS


@dataclass(frozen=True)
class ExecutionOrder:
    """A parent order: signed size, horizon, cap and risk appetite.

    x1 > 0 buys, x1 < 0 sells. max_pov caps side * h_n; risk_aversion
    weights the currency variance of shortfall in the objective (units
    1/currency).
    """

    x1: float
    t0: float
    t1: float
    max_pov: float
    risk_aversion: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.x1) or self.x1 == 0:
            raise ValidationError(f"x1 must be a non-zero share count, got {self.x1}")
        if not (self.t1 > self.t0):
            raise ValidationError(f"empty horizon: [{self.t0}, {self.t1}]")
        if not (0 < self.max_pov <= 1):
            raise ValidationError(f"max_pov must lie in (0, 1], got {self.max_pov}")
        if self.risk_aversion < 0:
            raise ValidationError(f"risk_aversion must be non-negative, got {self.risk_aversion}")

    @property
    def side(self) -> int:
        return 1 if self.x1 > 0 else -1

    @property
    def horizon(self) -> tuple[float, float]:
        return (self.t0, self.t1)


@dataclass(eq=False)
class QPProblem:
    """minimize c'H + H'QH over { a_eq'H = b_eq, lower <= H <= upper }.

    fixed_zero lists intervals with no market volume; those H entries
    are pinned to zero through their bounds.
    """

    Q: np.ndarray
    c: np.ndarray
    a_eq: np.ndarray
    b_eq: float
    lower: np.ndarray
    upper: np.ndarray
    fixed_zero: np.ndarray

    def __post_init__(self) -> None:
        n = self.c.size
        if self.Q.shape != (n, n):
            raise ValidationError("Q shape does not match c")
        for name in ("a_eq", "lower", "upper"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} length does not match c")
        if np.max(np.abs(self.Q - self.Q.T)) > 1e-8 * max(1.0, float(np.max(np.abs(self.Q)))):
            raise ValidationError("Q must be symmetric")
        if np.any(self.lower > self.upper):
            raise ValidationError("lower bound exceeds upper bound")
        if np.any(self.a_eq < 0):
            raise ValidationError("equality coefficients must be non-negative volumes")

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, h: np.ndarray) -> float:
        return float(self.c @ h + h @ self.Q @ h)


@dataclass(frozen=True)
class CostBreakdown:
    """Expected shortfall by component, bps of arrival notional."""

    spread_bps: float
    instantaneous_bps: float
    transient_bps: float
    permanent_bps: float

    @property
    def total_bps(self) -> float:
        return self.spread_bps + self.instantaneous_bps + self.transient_bps + self.permanent_bps


@dataclass(eq=False)
class Schedule:
    """A PoV vector with its evaluated economics."""

    grid: TimeGrid
    h: np.ndarray
    shares: np.ndarray
    x_cum: np.ndarray
    components: CostBreakdown
    expected_is_bps: float
    variance_is_dollar: float
    stdev_is_bps: float
    objective_value: float
    risk_aversion: float


def transient_kernel(profile: VolumeProfile, v_star: float) -> KernelMatrix:
    """Decaying cross-impact kernel in cumulative-volume distance.

    K[i, j] = exp(-|V_mid_i - V_mid_j| / v_star) / v_star. The diagonal
    is 1 / v_star; a smaller window means impact that fades faster as
    market volume prints.
    """
    if not (v_star > 0):
        raise ValidationError(f"v_star must be positive, got {v_star}")
    v_mid = profile.v_mid
    gap = np.abs(np.subtract.outer(v_mid, v_mid))
    return KernelMatrix(profile.grid, np.exp(-gap / v_star) / v_star, kind="transient")


def permanent_kernel(
    profile: VolumeProfile,
    eps0: float,
    hard: bool = False,
    prior_volume: float = 0.0,
) -> KernelMatrix:
    """Permanent-footprint kernel K[i, j] = 1 / (max(V_mid_i, V_mid_j) + eps0).

    eps0 keeps the early-horizon denominator away from zero; ``hard``
    switches the regularizer from V + eps0 to max(V, eps0).
    ``prior_volume`` shifts the volume clock when cumulative volume
    should not restart at the horizon start.
    """
    if not (eps0 > 0):
        raise ValidationError(f"eps0 must be positive, got {eps0}")
    if prior_volume < 0:
        raise ValidationError(f"prior_volume must be non-negative, got {prior_volume}")
    v_mid = profile.v_mid + prior_volume
    later = np.maximum.outer(v_mid, v_mid)
    if hard:
        values = 1.0 / np.maximum(later, eps0)
    else:
        values = 1.0 / (later + eps0)
    return KernelMatrix(profile.grid, values, kind="permanent")


def combined_operator(
    transient: KernelMatrix,
    permanent: KernelMatrix,
    risk: KernelMatrix | None,
    coeffs: CostCoefficients,
    risk_aversion: float,
) -> KernelMatrix:
    """Cost operator (a2/2) K_tran + (a3/2) K_perm + risk_aversion * K_risk.

    The halves compensate for the symmetric quadratic form counting
    every ordered pair twice; weights use the currency coefficients.
    """
    if not transient.grid.matches(permanent.grid):
        raise ValidationError("transient and permanent kernels live on different grids")
    values = (
        0.5 * coeffs.alpha2_dollar * transient.values
        + 0.5 * coeffs.alpha3_dollar * permanent.values
    )
    if risk is not None and risk_aversion != 0.0:
        if not risk.grid.matches(transient.grid):
            raise ValidationError("risk kernel lives on a different grid")
        values = values + risk_aversion * risk.values
    return KernelMatrix(transient.grid, values, kind="cost_operator")


def assemble_qp(
    order: ExecutionOrder,
    profile: VolumeProfile,
    spread: SpreadProfile,
    coeffs: CostCoefficients,
    operator: KernelMatrix,
) -> QPProblem:
    """Build the schedule QP for an order on a (sliced) horizon profile.

    The profile, spread and operator must share one grid covering
    exactly the order's horizon. Completion must be possible within the
    cap: max_pov * V1 >= |X1|, otherwise the order is rejected here.
    """
    grid = profile.grid
    if not spread.grid.matches(grid):
        raise ValidationError("spread profile grid does not match the volume profile")
    if not operator.grid.matches(grid):
        raise ValidationError("cost operator grid does not match the volume profile")
    if abs(grid.t_start - order.t0) > 1e-9 or abs(grid.t_end - order.t1) > 1e-9:
        raise ValidationError(
            f"profile covers [{grid.t_start}, {grid.t_end}] but the order horizon is "
            f"[{order.t0}, {order.t1}]"
        )
    v1 = profile.v1
    if v1 <= 0:
        raise InfeasibleError("horizon has no expected volume")
    required = abs(order.x1) / v1
    if order.max_pov * v1 < abs(order.x1) - 1e-9:
        raise InfeasibleError(
            f"order cannot complete: max_pov {order.max_pov:.6g} is below the "
            f"required participation |X1|/V1 = {required:.6g} "
            f"({abs(order.x1):.0f} shares against {v1:.0f} expected)"
        )

    d = profile.d
    side = order.side
    b = coeffs.alpha0_norm * side * spread.theta_bar
    c = d * b
    q = coeffs.alpha1_dollar * np.diag(d) + (d[:, None] * operator.values) * d[None, :]
    q = 0.5 * (q + q.T)

    if side > 0:
        lower = np.zeros(grid.n)
        upper = np.full(grid.n, order.max_pov)
    else:
        lower = np.full(grid.n, -order.max_pov)
        upper = np.zeros(grid.n)
    fixed_zero = np.nonzero(d == 0.0)[0]
    lower[fixed_zero] = 0.0
    upper[fixed_zero] = 0.0
    return QPProblem(
        Q=q, c=c, a_eq=d.copy(), b_eq=float(order.x1),
        lower=lower, upper=upper, fixed_zero=fixed_zero,
    )


def evaluate_schedule(
    h: np.ndarray,
    order: ExecutionOrder,
    profile: VolumeProfile,
    spread: SpreadProfile,
    coeffs: CostCoefficients,
    risk_kernel: KernelMatrix | None,
    permanent_hard: bool = False,
    prior_volume: float = 0.0,
) -> Schedule:
    """Price a PoV vector: component costs, risk and the blended objective.

    Works for any H, optimal or not. The expected-cost components come
    from the same feature extractor the calibrator uses, so a schedule
    evaluated here and a trade record fed through calibration decompose
    identically.
    """
    from .calibrate import pov_features  # deferred: calibrate imports this module

    h = np.asarray(h, dtype=float)
    if h.shape != (profile.grid.n,):
        raise ValidationError(f"H has {h.size} entries for {profile.grid.n} intervals")
    feats = pov_features(
        h,
        profile,
        spread,
        coeffs=coeffs,
        x1=order.x1,
        permanent_hard=permanent_hard,
        prior_volume=prior_volume,
    )
    breakdown = CostBreakdown(
        spread_bps=coeffs.alpha0_norm * feats[0],
        instantaneous_bps=coeffs.alpha1_norm * feats[1],
        transient_bps=coeffs.alpha2_norm * feats[2],
        permanent_bps=coeffs.alpha3_norm * feats[3],
    )
    shares = h * profile.d
    w = shares  # signed executed shares per interval
    if risk_kernel is not None:
        if not risk_kernel.grid.matches(profile.grid):
            raise ValidationError("risk kernel lives on a different grid")
        variance = float(w @ risk_kernel.values @ w)
    else:
        variance = 0.0
    notional = coeffs.p0 * abs(order.x1) * BPS
    expected_bps = breakdown.total_bps
    return Schedule(
        grid=profile.grid,
        h=h,
        shares=shares,
        x_cum=np.cumsum(shares),
        components=breakdown,
        expected_is_bps=expected_bps,
        variance_is_dollar=variance,
        stdev_is_bps=float(np.sqrt(max(variance, 0.0))) / notional,
        objective_value=expected_bps * notional + order.risk_aversion * variance,
        risk_aversion=order.risk_aversion,
    )


def execution_centroid(schedule: Schedule) -> float:
    """Share-weighted mean execution time, elapsed minutes from t0."""
    total = schedule.x_cum[-1]
    if total == 0:
        raise ValidationError("cannot locate the centroid of an empty schedule")
    return float((schedule.grid.elapsed_midpoints @ schedule.shares) / total)


def front_loading_index(schedule: Schedule) -> float:
    """1 at the open, 0 at the close: how early the order gets done."""
    return 1.0 - execution_centroid(schedule) / schedule.grid.span


def export_qp_bundle(problem: QPProblem, out_dir: str | Path) -> None:
    """Write the assembled QP as CSVs for external optimizers.

    Files: qp_quadratic.csv (i,j,value), qp_linear.csv, qp_equality.csv
    and qp_bounds.csv (per-index rows), qp_meta.csv (b_eq, n).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_kernel_csv(problem.Q, out / "qp_quadratic.csv")
    n = problem.n
    with open(out / "qp_linear.csv", "w", newline="") as fh:
        fh.write("index,value\n")
        for i in range(n):
            fh.write(f"{i},{problem.c[i]:.17g}\n")
    with open(out / "qp_equality.csv", "w", newline="") as fh:
        fh.write("index,coefficient\n")
        for i in range(n):
            fh.write(f"{i},{problem.a_eq[i]:.17g}\n")
    with open(out / "qp_bounds.csv", "w", newline="") as fh:
        fh.write("index,lower,upper\n")
        for i in range(n):
            fh.write(f"{i},{problem.lower[i]:.17g},{problem.upper[i]:.17g}\n")
    with open(out / "qp_meta.csv", "w", newline="") as fh:
        fh.write("key,value\n")
        fh.write(f"n,{n}\n")
        fh.write(f"b_eq,{problem.b_eq:.17g}\n")

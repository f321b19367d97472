"""Coefficient calibration from realized executions.

Each trade contributes one regression row: realized shortfall in bps
against four schedule features, one per cost component,

    C0  spread exposure     sum theta_bar_norm * dX / X1
    C1  own participation   sum h * dX / |X1|
    C2  transient load      quadratic form of the decay kernel, halved
    C3  permanent load      quadratic form of the footprint kernel, halved

so that E[IS_bps] = alpha0 C0 + alpha1 C1 + alpha2 C2 + alpha3 C3.
The same features price candidate schedules in `impact`, which keeps
scheduling and calibration numerically consistent by construction.

Shortfall noise scales with execution risk, so the fit is weighted
least squares with per-trade variances from the price-risk kernel
(floored to keep weights bounded). WLS is carried out as OLS on rows
scaled by inverse standard deviation.

Trades shorter than 5 minutes or below 0.1% average participation
carry too little signal and are filtered out before fitting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import KernelMatrix, brownian_kernel
from .errors import CalibrationError, ValidationError
from .impact import permanent_kernel, transient_kernel
from .profiles import SpreadProfile, TimeGrid, VolumeProfile, constant_spread
from .units import BPS

__all__ = [
    "TradeRecord",
    "CalibrationResult",
    "CalibrationReport",
    "FEATURE_NAMES",
    "MIN_DURATION_MINUTES",
    "MIN_AVG_POV",
    "pov_features",
    "compute_features",
    "trade_weight",
    "passes_filters",
    "wls_fit",
    "calibrate_trades",
    "synth_trades",
    "load_trade_db",
    "save_trade_db",
]

FEATURE_NAMES = ("C0_spread", "C1_instantaneous", "C2_transient", "C3_permanent")

MIN_DURATION_MINUTES = 5.0
MIN_AVG_POV = 0.001
DEFAULT_WEIGHT_FLOOR = 1e-4  # bps^2
COMPLETION_SLACK = 0.005

_COND_LIMIT = 1e10


def pov_features(
    h: np.ndarray,
    profile: VolumeProfile,
    spread: SpreadProfile,
    v_star: float | None = None,
    eps0: float | None = None,
    p0: float = 1.0,
    x1: float | None = None,
    coeffs=None,
    permanent_hard: bool = False,
    prior_volume: float = 0.0,
) -> np.ndarray:
    """Four cost features of an arbitrary PoV vector.

    ``x1`` is the signed parent size the features are normalized by
    (defaults to the schedule's own executed total). ``coeffs`` may be
    passed instead of v_star / eps0 / p0. C2 and C3 are the symmetric
    kernel quadratic forms at half weight, which matches both the
    ordered-pair integral and the QP's quadratic term exactly.
    """
    if coeffs is not None:
        v_star, eps0, p0 = coeffs.v_star, coeffs.eps0, coeffs.p0
    if v_star is None or eps0 is None:
        raise ValidationError("pov_features needs v_star and eps0 (or a coeffs object)")
    h = np.asarray(h, dtype=float)
    d = profile.d
    if h.shape != d.shape:
        raise ValidationError(f"H has {h.size} entries for {d.size} intervals")
    if not spread.grid.matches(profile.grid):
        raise ValidationError("spread profile grid does not match the volume profile")
    w = h * d  # signed executed shares per interval
    if x1 is None:
        x1 = float(w.sum())
    if x1 == 0:
        raise ValidationError("x1 must be non-zero to normalize features")
    ax1 = abs(x1)
    theta_norm = spread.theta_bar / (p0 * BPS)
    c0 = float(theta_norm @ w) / x1
    c1 = float(h @ w) / ax1
    tran = transient_kernel(profile, v_star).values
    perm = permanent_kernel(profile, eps0, hard=permanent_hard, prior_volume=prior_volume).values
    c2 = float(w @ tran @ w) / (2.0 * ax1)
    c3 = float(w @ perm @ w) / (2.0 * ax1)
    return np.array([c0, c1, c2, c3])


@dataclass(eq=False)
class TradeRecord:
    """One completed parent order with its realized shortfall."""

    trade_id: str
    profile: VolumeProfile
    h: np.ndarray
    x1: float
    p0: float
    is_bps: float

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=float)
        if h.shape != (self.profile.grid.n,):
            raise ValidationError(
                f"trade {self.trade_id}: {h.size} fills for {self.profile.grid.n} intervals"
            )
        if not np.all(np.isfinite(h)):
            raise ValidationError(f"trade {self.trade_id}: non-finite participation")
        if self.x1 == 0 or not np.isfinite(self.x1):
            raise ValidationError(f"trade {self.trade_id}: x1 must be non-zero")
        if not (self.p0 > 0):
            raise ValidationError(f"trade {self.trade_id}: p0 must be positive")
        executed = float(h @ self.profile.d)
        if abs(executed - self.x1) > COMPLETION_SLACK * abs(self.x1):
            raise ValidationError(
                f"trade {self.trade_id}: executed {executed:.1f} shares but x1 is "
                f"{self.x1:.1f} (mismatch above {COMPLETION_SLACK:.1%})"
            )
        h.setflags(write=False)
        self.h = h

    @property
    def side(self) -> int:
        return 1 if self.x1 > 0 else -1

    @property
    def duration_minutes(self) -> float:
        return self.profile.grid.span

    @property
    def avg_pov(self) -> float:
        v1 = self.profile.v1
        return abs(self.x1) / v1 if v1 > 0 else float("inf")


def passes_filters(
    trade: TradeRecord,
    min_duration: float = MIN_DURATION_MINUTES,
    min_avg_pov: float = MIN_AVG_POV,
) -> tuple[bool, str | None]:
    """Signal filters; returns (ok, reason-if-rejected)."""
    if trade.duration_minutes < min_duration:
        return False, f"duration {trade.duration_minutes:g} min below {min_duration:g}"
    if trade.avg_pov < min_avg_pov:
        return False, f"average participation {trade.avg_pov:.5f} below {min_avg_pov:g}"
    return True, None


def compute_features(
    trade: TradeRecord,
    spread: SpreadProfile,
    v_star: float,
    eps0: float,
    permanent_hard: bool = False,
) -> np.ndarray:
    """Regression features of one trade, normalized by its own arrival price."""
    return pov_features(
        trade.h,
        trade.profile,
        spread,
        v_star=v_star,
        eps0=eps0,
        p0=trade.p0,
        x1=trade.x1,
        permanent_hard=permanent_hard,
    )


def trade_weight(
    trade: TradeRecord,
    risk_kernel: KernelMatrix,
    floor: float = DEFAULT_WEIGHT_FLOOR,
) -> float:
    """Shortfall variance of a trade in bps^2, floored.

    The reciprocal is the WLS weight; the floor keeps near-riskless
    trades from dominating the fit.
    """
    if not risk_kernel.grid.matches(trade.profile.grid):
        raise ValidationError(f"trade {trade.trade_id}: risk kernel grid mismatch")
    if floor <= 0:
        raise ValidationError(f"weight floor must be positive, got {floor}")
    w = trade.h * trade.profile.d
    var_dollar = float(w @ risk_kernel.values @ w)
    notional = trade.p0 * abs(trade.x1) * BPS
    return max(var_dollar / notional**2, floor)


@dataclass(eq=False)
class CalibrationResult:
    """WLS estimates with their uncertainty."""

    alpha: np.ndarray  # (4,) normalized coefficients
    stderr: np.ndarray  # (4,)
    covariance: np.ndarray  # (4, 4)
    r_squared: float
    n_trades: int


@dataclass(eq=False)
class CalibrationReport:
    """Fit plus bookkeeping about which trades made it in."""

    result: CalibrationResult
    used_trade_ids: list[str]
    skipped: list[tuple[str, str]] = field(default_factory=list)


def wls_fit(features: np.ndarray, targets: np.ndarray, variances: np.ndarray) -> CalibrationResult:
    """Heteroskedastic WLS of shortfall on the four features.

    Rows are scaled by 1 / sqrt(variance) and fit by ordinary least
    squares; with equal variances this reduces to plain OLS. A design
    whose weighted columns are numerically collinear is rejected, with
    the worst feature pair named.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    var = np.asarray(variances, dtype=float)
    if x.ndim != 2 or x.shape[1] != 4:
        raise CalibrationError(f"feature matrix must be (n, 4), got {x.shape}")
    n = x.shape[0]
    if y.shape != (n,) or var.shape != (n,):
        raise CalibrationError("targets and variances must match the feature rows")
    if n < 5:
        raise CalibrationError(f"need at least 5 usable trades, got {n}")
    if np.any(var <= 0):
        raise CalibrationError("trade variances must be positive")

    scale = 1.0 / np.sqrt(var)
    xw = x * scale[:, None]
    yw = y * scale

    cond = np.linalg.cond(xw)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        corr = np.corrcoef(xw, rowvar=False)
        np.fill_diagonal(corr, 0.0)
        corr = np.nan_to_num(corr)
        i, j = divmod(int(np.argmax(np.abs(corr))), 4)
        raise CalibrationError(
            f"design is rank deficient (condition number {cond:.3g}); features "
            f"{FEATURE_NAMES[i]} and {FEATURE_NAMES[j]} are nearly collinear "
            f"(weighted correlation {corr[i, j]:.6f})"
        )

    beta, _, _, _ = np.linalg.lstsq(xw, yw, rcond=None)
    resid = yw - xw @ beta
    rss = float(resid @ resid)
    dof = n - 4
    sigma2 = rss / dof
    gram_inv = np.linalg.inv(xw.T @ xw)
    covariance = sigma2 * gram_inv
    tss = float(yw @ yw)
    r_squared = 1.0 - rss / tss if tss > 0 else 0.0
    return CalibrationResult(
        alpha=beta,
        stderr=np.sqrt(np.diag(covariance)),
        covariance=covariance,
        r_squared=r_squared,
        n_trades=n,
    )


def calibrate_trades(
    trades: list[TradeRecord],
    *,
    v_star: float,
    eps0: float,
    theta_bps: float,
    sigma0: float,
    weight_floor: float = DEFAULT_WEIGHT_FLOOR,
    min_duration: float = MIN_DURATION_MINUTES,
    min_avg_pov: float = MIN_AVG_POV,
    permanent_hard: bool = False,
) -> CalibrationReport:
    """Full pipeline: filter trades, build rows, fit.

    Spreads are taken as constant at ``theta_bps`` and execution risk
    as Brownian with ``sigma0`` on each trade's own grid; both are
    quoted in homogenized units so they apply across arrival prices.
    """
    rows: list[np.ndarray] = []
    targets: list[float] = []
    variances: list[float] = []
    used: list[str] = []
    skipped: list[tuple[str, str]] = []
    for trade in trades:
        ok, reason = passes_filters(trade, min_duration, min_avg_pov)
        if not ok:
            skipped.append((trade.trade_id, reason))
            continue
        spread = constant_spread(trade.profile.grid, theta_bps * trade.p0 * BPS)
        kernel = brownian_kernel(trade.profile.grid, sigma0, trade.p0)
        rows.append(compute_features(trade, spread, v_star, eps0, permanent_hard))
        targets.append(trade.is_bps)
        variances.append(trade_weight(trade, kernel, weight_floor))
        used.append(trade.trade_id)
    if len(rows) < 5:
        raise CalibrationError(
            f"only {len(rows)} trades passed the filters ({len(skipped)} skipped); "
            f"need at least 5"
        )
    result = wls_fit(np.asarray(rows), np.asarray(targets), np.asarray(variances))
    return CalibrationReport(result=result, used_trade_ids=used, skipped=skipped)


# ---------------------------------------------------------------------------
# Synthetic trades
# ---------------------------------------------------------------------------


def _cap_to_target(w: np.ndarray, d: np.ndarray, target: float, cap: float) -> np.ndarray:
    """Scale a positive shape onto { sum h d = target, 0 <= h <= cap }.

    Bisection on the multiplier of clip(t * w, 0, cap); target must not
    exceed cap * sum(d).
    """
    total = float(d.sum())
    if target > cap * total:
        raise ValidationError("target participation exceeds the cap")
    lo, hi = 0.0, 1.0
    while float(np.minimum(hi * w, cap) @ d) < target:
        hi *= 2.0
        if hi > 1e12:
            raise ValidationError("cannot reach target participation")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(np.minimum(mid * w, cap) @ d) < target:
            lo = mid
        else:
            hi = mid
    return np.minimum(hi * w, cap)


def synth_trades(
    alpha_true: np.ndarray,
    n_trades: int,
    seed: int,
    *,
    v_star: float,
    eps0: float,
    theta_bps: float = 5.5,
    sigma0: float = 1e-5,
    noise_scale: float = 1.0,
    day_minutes: int = 390,
    adv: float = 5e6,
    skew: float = 0.5,
    weight_floor: float = DEFAULT_WEIGHT_FLOOR,
) -> list[TradeRecord]:
    """Generate a synthetic trade database with known truth.

    Durations are log-uniform from 5 minutes to the full smile-shaped
    day, average participation log-uniform in [0.5%, 35%], with jagged
    randomized intraday shapes (about half the trades also skip a random
    subset of minutes entirely), both sides, varying arrival prices.
    The mix of short bursts, sparse fills and all-day orders is what
    separates the four cost terms in the fit; smooth medium-length
    schedules alone leave the transient and permanent columns nearly
    collinear. Realized shortfall is the exact feature pricing plus
    Gaussian noise whose variance matches `trade_weight` times
    ``noise_scale``^2, so the WLS weighting is correctly specified.
    Trade i draws from the counter-based stream (seed, i).
    """
    from .profiles import build_uniform_grid, synth_u_shape_volume

    alpha_true = np.asarray(alpha_true, dtype=float)
    if alpha_true.shape != (4,):
        raise ValidationError("alpha_true must have 4 entries")
    day_grid = build_uniform_grid(0.0, float(day_minutes), 1.0)
    day = synth_u_shape_volume(day_grid, adv, skew)
    trades: list[TradeRecord] = []
    for i in range(n_trades):
        key = np.array([seed, i], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        duration = int(np.exp(rng.uniform(np.log(5.0), np.log(float(day_minutes)))))
        start = int(rng.integers(0, day_minutes - duration + 1))
        window = VolumeProfile(
            TimeGrid(day.grid.boundaries[start : start + duration + 1].copy()),
            day.d[start : start + duration].copy(),
            adv=day.adv,
        )
        avg_pov = float(np.exp(rng.uniform(np.log(0.005), np.log(0.35))))
        side = 1 if rng.random() < 0.5 else -1
        u = np.linspace(0.0, 1.0, duration)
        tilt = rng.uniform(-1.0, 1.0)
        curve = rng.uniform(-2.0, 2.0)
        shape = np.exp(tilt * u + curve * (u - 0.5) ** 2 + 1.2 * rng.standard_normal(duration))
        target = avg_pov * window.v1
        if rng.random() < 0.5 and duration > 3:
            # Skip minutes only when the survivors can still absorb the
            # target with headroom, else the cap makes it unreachable.
            keep = rng.random(duration) < rng.uniform(0.3, 0.9)
            if keep.any() and 0.5 * float(window.d[keep].sum()) > 1.5 * target:
                shape = shape * keep
        h_abs = _cap_to_target(shape, window.d, target, cap=0.5)
        x1 = side * float(h_abs @ window.d)
        h = side * h_abs
        p0 = float(rng.uniform(15.0, 120.0))
        trade = TradeRecord(
            trade_id=f"T{i:05d}", profile=window, h=h, x1=x1, p0=p0, is_bps=0.0
        )
        spread = constant_spread(window.grid, theta_bps * p0 * BPS)
        feats = compute_features(trade, spread, v_star, eps0)
        kernel = brownian_kernel(window.grid, sigma0, p0)
        var_bps = trade_weight(trade, kernel, weight_floor)
        noise = noise_scale * np.sqrt(var_bps) * float(rng.standard_normal())
        trade.is_bps = float(feats @ alpha_true) + noise
        trades.append(trade)
    return trades


# ---------------------------------------------------------------------------
# Trade database CSVs: a directory with
#   orders.csv   trade_id,X1,side,p0,is_bps
#   fills.csv    trade_id,interval_index,minute,d_n,h_n
# ---------------------------------------------------------------------------


def save_trade_db(trades: list[TradeRecord], db_dir: str | Path) -> None:
    db = Path(db_dir)
    db.mkdir(parents=True, exist_ok=True)
    with open(db / "orders.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trade_id", "X1", "side", "p0", "is_bps"])
        for t in trades:
            writer.writerow(
                [t.trade_id, f"{t.x1:.17g}", t.side, f"{t.p0:.17g}", f"{t.is_bps:.17g}"]
            )
    with open(db / "fills.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trade_id", "interval_index", "minute", "d_n", "h_n"])
        for t in trades:
            starts = t.profile.grid.boundaries[:-1]
            for k in range(t.profile.grid.n):
                writer.writerow(
                    [t.trade_id, k, f"{starts[k]:.17g}", f"{t.profile.d[k]:.17g}", f"{t.h[k]:.17g}"]
                )


def trade_from_fills(
    trade_id: str,
    x1: float,
    side: int,
    p0: float,
    is_bps: float,
    minutes: np.ndarray,
    d: np.ndarray,
    h: np.ndarray,
) -> TradeRecord:
    """Rebuild one trade from serialized fill rows.

    The grid is inferred from interval start minutes; the final
    interval reuses the previous length (1.0 for a single fill).
    """
    minutes = np.asarray(minutes, dtype=float)
    d = np.asarray(d, dtype=float)
    h = np.asarray(h, dtype=float)
    if minutes.size == 0:
        raise ValidationError("no fills")
    if not (minutes.size == d.size == h.size):
        raise ValidationError("fill columns have mismatched lengths")
    if minutes.size > 1 and np.any(np.diff(minutes) <= 0):
        raise ValidationError("minutes are not strictly increasing")
    if np.any(d < 0):
        raise ValidationError("negative interval volume")
    last_dt = minutes[-1] - minutes[-2] if minutes.size > 1 else 1.0
    grid = TimeGrid(np.concatenate((minutes, [minutes[-1] + last_dt])))
    profile = VolumeProfile(grid, d, adv=max(float(d.sum()), 1.0))
    if side not in (1, -1) or side != (1 if x1 > 0 else -1):
        raise ValidationError(f"side {side} inconsistent with X1 {x1}")
    return TradeRecord(trade_id=trade_id, profile=profile, h=h, x1=x1, p0=p0, is_bps=is_bps)


def load_trade_db(db_dir: str | Path) -> tuple[list[TradeRecord], list[tuple[str, str]]]:
    """Read a trade database; invalid trades are skipped and named.

    Returns (trades, rejects) where rejects holds (trade_id, reason)
    for orders that could not be reconstructed. Malformed rows fail the
    whole load since silently dropping fills would corrupt trades.
    """
    db = Path(db_dir)
    orders_path = db / "orders.csv"
    fills_path = db / "fills.csv"
    for p in (orders_path, fills_path):
        if not p.exists():
            raise ValidationError(f"{p}: no such file")

    orders: dict[str, tuple[float, int, float, float]] = {}
    with open(orders_path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["trade_id", "X1", "side", "p0", "is_bps"]
        if reader.fieldnames != expected:
            raise ValidationError(f"{orders_path}: expected header {','.join(expected)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                orders[row["trade_id"]] = (
                    float(row["X1"]), int(row["side"]), float(row["p0"]), float(row["is_bps"])
                )
            except (TypeError, ValueError):
                raise ValidationError(f"{orders_path}: row {row_no}: bad entry") from None

    fills: dict[str, list[tuple[int, float, float, float]]] = {}
    with open(fills_path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["trade_id", "interval_index", "minute", "d_n", "h_n"]
        if reader.fieldnames != expected:
            raise ValidationError(f"{fills_path}: expected header {','.join(expected)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                fills.setdefault(row["trade_id"], []).append(
                    (int(row["interval_index"]), float(row["minute"]),
                     float(row["d_n"]), float(row["h_n"]))
                )
            except (TypeError, ValueError):
                raise ValidationError(f"{fills_path}: row {row_no}: bad entry") from None

    trades: list[TradeRecord] = []
    rejects: list[tuple[str, str]] = []
    for trade_id, (x1, side, p0, is_bps) in orders.items():
        try:
            rows = fills.get(trade_id)
            if not rows:
                raise ValidationError("no fills")
            rows.sort(key=lambda r: r[0])
            indices = [r[0] for r in rows]
            if indices != list(range(len(rows))):
                raise ValidationError("interval_index values are not contiguous from 0")
            trades.append(
                trade_from_fills(
                    trade_id,
                    x1,
                    side,
                    p0,
                    is_bps,
                    np.array([r[1] for r in rows]),
                    np.array([r[2] for r in rows]),
                    np.array([r[3] for r in rows]),
                )
            )
        except ValidationError as exc:
            rejects.append((trade_id, str(exc)))
    for trade_id in fills:
        if trade_id not in orders:
            rejects.append((trade_id, "fills without an order row"))
    return trades, rejects

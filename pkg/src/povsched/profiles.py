"""Intraday time grids, volume curves and spread curves.

A schedule lives on a partition of the trading horizon into intervals.
`TimeGrid` holds the interval boundaries (minutes from the open),
`VolumeProfile` the expected market volume per interval, and
`SpreadProfile` the expected half-spread level per interval. Cumulative
volume restarts at zero at the start of whatever horizon the profile
covers; slicing a day-long profile down to an execution window therefore
re-bases the volume clock to the window start.

Profiles are plain containers validated on construction; all heavy
lifting (kernels, cost assembly) happens in other modules on top of
these.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

__all__ = [
    "TimeGrid",
    "VolumeProfile",
    "SpreadProfile",
    "build_uniform_grid",
    "synth_u_shape_volume",
    "constant_spread",
    "slice_horizon",
    "slice_spread",
    "load_profile",
    "save_profile",
]

# Boundary alignment tolerance, in minutes.
GRID_TOL = 1e-9


@dataclass(eq=False)
class TimeGrid:
    """Strictly increasing interval boundaries t_0 < t_1 < ... < t_N."""

    boundaries: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ValidationError("grid needs at least two boundaries")
        if not np.all(np.isfinite(b)):
            raise ValidationError("grid boundaries must be finite")
        if np.any(np.diff(b) <= 0):
            raise ValidationError("grid boundaries must be strictly increasing")
        b.setflags(write=False)
        self.boundaries = b

    @property
    def n(self) -> int:
        """Number of intervals."""
        return self.boundaries.size - 1

    @property
    def t_start(self) -> float:
        return float(self.boundaries[0])

    @property
    def t_end(self) -> float:
        return float(self.boundaries[-1])

    @property
    def span(self) -> float:
        """Horizon length in minutes."""
        return self.t_end - self.t_start

    @property
    def dt(self) -> np.ndarray:
        """Interval lengths, minutes."""
        return np.diff(self.boundaries)

    @property
    def midpoints(self) -> np.ndarray:
        """Interval midpoint times t_{n-1/2}, absolute minutes."""
        return 0.5 * (self.boundaries[:-1] + self.boundaries[1:])

    @property
    def elapsed_midpoints(self) -> np.ndarray:
        """Interval midpoints measured from the horizon start."""
        return self.midpoints - self.t_start

    def matches(self, other: "TimeGrid", tol: float = GRID_TOL) -> bool:
        return (
            self.n == other.n
            and bool(np.all(np.abs(self.boundaries - other.boundaries) <= tol))
        )

    def index_of(self, t: float, tol: float = GRID_TOL) -> int:
        """Index of the boundary equal to ``t``, or raise."""
        hits = np.nonzero(np.abs(self.boundaries - t) <= tol)[0]
        if hits.size == 0:
            raise ValidationError(
                f"time {t} does not sit on a grid boundary (tolerance {tol} min)"
            )
        return int(hits[0])


def build_uniform_grid(t_start: float, t_end: float, dt: float) -> TimeGrid:
    """Uniform grid over [t_start, t_end] with spacing dt minutes.

    dt must divide the span; a leftover larger than the alignment
    tolerance is rejected rather than silently absorbed.
    """
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    if t_end <= t_start:
        raise ValidationError(f"empty horizon: [{t_start}, {t_end}]")
    span = t_end - t_start
    count = round(span / dt)
    if count < 1 or abs(count * dt - span) > GRID_TOL:
        raise ValidationError(
            f"dt={dt} does not divide the horizon of {span} minutes "
            f"(remainder {span - int(span / dt) * dt:g})"
        )
    boundaries = t_start + dt * np.arange(count + 1, dtype=float)
    boundaries[-1] = t_end
    return TimeGrid(boundaries)


@dataclass(eq=False)
class VolumeProfile:
    """Per-interval expected market volume on a grid.

    ``d`` holds interval volumes (shares, >= 0); ``v_cum`` the running
    totals V_n = d_1 + ... + d_n, so v_cum[-1] is the horizon volume V1.
    ``adv`` is kept separately: a sliced profile remembers the average
    daily volume of the day it came from, which sizing rules (e.g.
    decay windows as a fraction of ADV) refer to.
    """

    grid: TimeGrid
    d: np.ndarray
    adv: float
    v_cum: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        d = np.asarray(self.d, dtype=float)
        if d.shape != (self.grid.n,):
            raise ValidationError(
                f"volume vector has {d.size} entries for {self.grid.n} intervals"
            )
        if not np.all(np.isfinite(d)):
            raise ValidationError("volumes must be finite")
        if np.any(d < 0):
            bad = int(np.argmax(d < 0))
            raise ValidationError(f"negative volume in interval {bad}: {d[bad]}")
        if not (self.adv > 0):
            raise ValidationError(f"adv must be positive, got {self.adv}")
        d.setflags(write=False)
        self.d = d
        v = np.cumsum(d)
        v.setflags(write=False)
        self.v_cum = v

    @property
    def v1(self) -> float:
        """Total volume over the horizon."""
        return float(self.v_cum[-1]) if self.d.size else 0.0

    @property
    def v_mid(self) -> np.ndarray:
        """Cumulative volume at interval midpoints, (V_{n-1} + V_n) / 2."""
        prev = np.concatenate(([0.0], self.v_cum[:-1]))
        return 0.5 * (prev + self.v_cum)


@dataclass(eq=False)
class SpreadProfile:
    """Per-interval expected spread level (currency units).

    ``theta_bar`` is interpreted at interval midpoints. ``kernel``, when
    present, is the covariance of spread fluctuations on the same grid
    (used as an additional risk term); constant-spread setups leave it
    None.
    """

    grid: TimeGrid
    theta_bar: np.ndarray
    kernel: np.ndarray | None = None

    def __post_init__(self) -> None:
        th = np.asarray(self.theta_bar, dtype=float)
        if th.shape != (self.grid.n,):
            raise ValidationError(
                f"spread vector has {th.size} entries for {self.grid.n} intervals"
            )
        if not np.all(np.isfinite(th)) or np.any(th < 0):
            raise ValidationError("spread levels must be finite and non-negative")
        th.setflags(write=False)
        self.theta_bar = th
        if self.kernel is not None:
            k = np.asarray(self.kernel, dtype=float)
            if k.shape != (self.grid.n, self.grid.n):
                raise ValidationError("spread kernel shape does not match the grid")
            if np.max(np.abs(k - k.T)) > 1e-8 * max(1.0, np.max(np.abs(k))):
                raise ValidationError("spread kernel must be symmetric")
            self.kernel = k


def constant_spread(grid: TimeGrid, theta_bar: float) -> SpreadProfile:
    if theta_bar < 0:
        raise ValidationError(f"spread level must be non-negative, got {theta_bar}")
    return SpreadProfile(grid, np.full(grid.n, float(theta_bar)))


def synth_u_shape_volume(grid: TimeGrid, adv: float, skew: float) -> VolumeProfile:
    """Intraday volume smile on the given grid.

    The density is 1 + skew * (2u - 1)^2 with u the fractional position
    in the horizon, evaluated at interval midpoints and scaled so the
    intervals sum to exactly ``adv``. skew = 0 gives a flat profile;
    larger values put more volume near the open and the close.
    """
    if not (adv > 0):
        raise ValidationError(f"adv must be positive, got {adv}")
    if skew < 0:
        raise ValidationError(f"skew must be non-negative, got {skew}")
    u = (grid.midpoints - grid.t_start) / grid.span
    density = 1.0 + skew * (2.0 * u - 1.0) ** 2
    raw = density * grid.dt
    d = raw * (adv / raw.sum())
    return VolumeProfile(grid, d, adv=adv)


def slice_horizon(profile: VolumeProfile, t0: float, t1: float) -> VolumeProfile:
    """Restrict a profile to [t0, t1]; the volume clock restarts at t0.

    Both endpoints must fall on existing grid boundaries (1e-9 min
    tolerance). The slice keeps the parent's adv.
    """
    if t1 <= t0:
        raise ValidationError(f"empty slice: [{t0}, {t1}]")
    i0 = profile.grid.index_of(t0)
    i1 = profile.grid.index_of(t1)
    sub = TimeGrid(profile.grid.boundaries[i0 : i1 + 1].copy())
    return VolumeProfile(sub, profile.d[i0:i1].copy(), adv=profile.adv)


def slice_spread(spread: SpreadProfile, t0: float, t1: float) -> SpreadProfile:
    """Same boundary-aligned slicing for spread curves."""
    if t1 <= t0:
        raise ValidationError(f"empty slice: [{t0}, {t1}]")
    i0 = spread.grid.index_of(t0)
    i1 = spread.grid.index_of(t1)
    sub = TimeGrid(spread.grid.boundaries[i0 : i1 + 1].copy())
    kernel = None
    if spread.kernel is not None:
        kernel = spread.kernel[i0:i1, i0:i1].copy()
    return SpreadProfile(sub, spread.theta_bar[i0:i1].copy(), kernel)


# ---------------------------------------------------------------------------
# CSV IO
#
# Volume files:  minute,volume      one row per interval, minute = start
# Spread files:  minute,theta_bar
#
# Interval lengths are inferred from consecutive minute values; the last
# interval reuses the previous length (1.0 for a single-row file).
# ---------------------------------------------------------------------------

_VOLUME_HEADER = ["minute", "volume"]
_SPREAD_HEADER = ["minute", "theta_bar"]


def _read_two_column_csv(path: Path, value_name: str) -> tuple[np.ndarray, np.ndarray]:
    minutes: list[float] = []
    values: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header != ["minute", value_name]:
            raise ValidationError(
                f"{path}: expected header 'minute,{value_name}', got {','.join(header)!r}"
            )
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}: row {row_no}: expected 2 columns, got {len(row)}")
            try:
                minutes.append(float(row[0]))
                values.append(float(row[1]))
            except ValueError:
                raise ValidationError(f"{path}: row {row_no}: non-numeric value") from None
    if not minutes:
        raise ValidationError(f"{path}: no data rows")
    m = np.asarray(minutes)
    v = np.asarray(values)
    steps = np.diff(m)
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0)) + 1
        raise ValidationError(f"{path}: row {bad + 2}: minutes are not strictly increasing")
    return m, v


def _grid_from_starts(minutes: np.ndarray) -> TimeGrid:
    last_dt = minutes[-1] - minutes[-2] if minutes.size > 1 else 1.0
    return TimeGrid(np.concatenate((minutes, [minutes[-1] + last_dt])))


def load_profile(path: str | Path, format: str = "csv") -> VolumeProfile | SpreadProfile:
    """Load a volume or spread curve; the header decides which.

    Row-level problems (negative volume, non-monotone minutes, bad
    numbers) are reported with their row number.
    """
    if format != "csv":
        raise ValidationError(f"unsupported profile format {format!r}")
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: no such file")
    with open(path, newline="") as fh:
        first = fh.readline().strip()
    header = [h.strip() for h in first.split(",")] if first else []
    if header == _VOLUME_HEADER:
        minutes, vols = _read_two_column_csv(path, "volume")
        if np.any(vols < 0):
            bad = int(np.argmax(vols < 0))
            raise ValidationError(f"{path}: row {bad + 2}: negative volume {vols[bad]}")
        return VolumeProfile(_grid_from_starts(minutes), vols, adv=float(vols.sum()))
    if header == _SPREAD_HEADER:
        minutes, theta = _read_two_column_csv(path, "theta_bar")
        if np.any(theta < 0):
            bad = int(np.argmax(theta < 0))
            raise ValidationError(f"{path}: row {bad + 2}: negative spread {theta[bad]}")
        return SpreadProfile(_grid_from_starts(minutes), theta)
    raise ValidationError(
        f"{path}: unrecognized header {first!r} "
        f"(expected 'minute,volume' or 'minute,theta_bar')"
    )


def save_profile(profile: VolumeProfile | SpreadProfile, path: str | Path) -> None:
    """Write a profile back out in its two-column CSV form."""
    path = Path(path)
    if isinstance(profile, VolumeProfile):
        header, values = _VOLUME_HEADER, profile.d
    else:
        header, values = _SPREAD_HEADER, profile.theta_bar
    starts = profile.grid.boundaries[:-1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, v in zip(starts, values):
            writer.writerow([f"{t:.10g}", f"{v:.12g}"])

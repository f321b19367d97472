"""Price-uncertainty kernels and their Monte Carlo estimation.

Execution risk enters the scheduler through a covariance kernel
K(s, t) = p0^2 * Cov(delta(s), delta(t)) of the homogenized price
deviation delta from the arrival price, with the clock started at the
horizon start (delta(0) = 0). Two closed forms are provided:

* driftless Brownian:  Cov = sigma0^2 * min(s, t)
* mean reversion (OU, started at zero):
      Cov = alpha^2 / (2 kappa) * exp(-kappa |t - s|)
                                * (1 - exp(-2 kappa min(s, t)))

Anything else (e.g. the asymmetric-volatility diffusion, where downside
moves raise local vol up to a hard cap) goes through `simulate_paths`
plus `mc_estimate_kernel`, which averages uncentered products over
paths and clips the tiny negative eigenvalues the sampling noise
introduces.

Kernels are evaluated at interval midpoints of the schedule grid,
measured from the horizon start. Matrices of kernel values on a grid
travel as `KernelMatrix` and can be exported to / imported from CSV so
externally estimated kernels can be injected.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .profiles import TimeGrid

__all__ = [
    "KernelMatrix",
    "SDESpec",
    "PathEnsemble",
    "PsdReport",
    "brownian_kernel",
    "mean_reversion_kernel",
    "asv_diffusion",
    "simulate_paths",
    "mc_estimate_kernel",
    "mc_estimate_kernel_repair",
    "mc_kernel_stderr",
    "combined_risk_kernel",
    "check_psd",
    "project_psd",
    "max_asymmetry",
    "read_kernel_csv",
    "save_kernel_csv",
    "thread_count",
]

_SYM_TOL = 1e-8
_MODELS = ("brownian", "mean_reversion", "asv")

# Paths are simulated in fixed-size blocks with one counter-based RNG
# stream per path, so results do not depend on how blocks are spread
# over workers.
_PATH_BLOCK = 4096


def thread_count() -> int:
    """Worker cap from POVSCHED_THREADS (default 1)."""
    raw = os.environ.get("POVSCHED_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"POVSCHED_THREADS must be an integer, got {raw!r}") from None


@dataclass(eq=False)
class KernelMatrix:
    """Symmetric kernel values on a grid's interval midpoints."""

    grid: TimeGrid
    values: np.ndarray
    kind: str = "price_risk"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        n = self.grid.n
        if v.shape != (n, n):
            raise ValidationError(f"kernel shape {v.shape} does not match {n} intervals")
        if not np.all(np.isfinite(v)):
            raise ValidationError("kernel values must be finite")
        dev, i, j = max_asymmetry(v)
        if dev > _SYM_TOL * max(1.0, float(np.max(np.abs(v)))):
            raise ValidationError(f"kernel is not symmetric: entry ({i},{j}) deviates by {dev:g}")
        v = 0.5 * (v + v.T)
        v.setflags(write=False)
        self.values = v


@dataclass(frozen=True)
class SDESpec:
    """Parameters of the price-deviation SDE, homogenized units.

    model       one of brownian | mean_reversion | asv
    sigma0      base diffusion per sqrt(minute) (brownian, asv)
    kappa       mean-reversion speed per minute
    alpha       OU diffusion per sqrt(minute)
    beta        downside vol amplification rate (asv)
    cap         hard multiplier ceiling on the asv diffusion
    """

    model: str
    sigma0: float = 0.0
    kappa: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    cap: float = 2.0

    def __post_init__(self) -> None:
        if self.model not in _MODELS:
            raise ValidationError(f"unknown dynamics model {self.model!r}; pick one of {_MODELS}")
        if self.model in ("brownian", "asv") and not (self.sigma0 > 0):
            raise ValidationError(f"sigma0 must be positive, got {self.sigma0}")
        if self.model == "mean_reversion":
            if not (self.kappa > 0):
                raise ValidationError(f"kappa must be positive for mean reversion, got {self.kappa}")
            if not (self.alpha > 0):
                raise ValidationError(f"alpha must be positive for mean reversion, got {self.alpha}")
        if self.model == "asv":
            if self.beta < 0:
                raise ValidationError(f"beta must be non-negative, got {self.beta}")
            if not (self.cap >= 1):
                raise ValidationError(f"cap must be at least 1, got {self.cap}")


@dataclass(eq=False)
class PathEnsemble:
    """Simulated deviation paths sampled at grid boundaries and midpoints."""

    spec: SDESpec
    grid: TimeGrid
    seed: int
    substeps: int
    n_paths: int
    boundary_values: np.ndarray  # (n_paths, N+1), first column all zero
    midpoint_values: np.ndarray  # (n_paths, N)


@dataclass(frozen=True)
class PsdReport:
    min_eig: float
    max_eig: float
    passed: bool


def _eval_times(grid: TimeGrid, tau: np.ndarray | None) -> np.ndarray:
    if tau is None:
        return grid.elapsed_midpoints
    tau = np.asarray(tau, dtype=float)
    if tau.ndim != 1 or tau.size != grid.n:
        raise ValidationError(f"tau must have one entry per interval ({grid.n})")
    if np.any(tau < 0):
        raise ValidationError("kernel evaluation times must be non-negative")
    return tau


def brownian_kernel(
    grid: TimeGrid, sigma0: float, p0: float, tau: np.ndarray | None = None
) -> KernelMatrix:
    """Currency^2 covariance p0^2 sigma0^2 min(s, t) at interval midpoints.

    ``tau`` overrides the evaluation times (elapsed minutes from the
    horizon start); the default is the grid's interval midpoints.
    """
    if not (sigma0 > 0):
        raise ValidationError(f"sigma0 must be positive, got {sigma0}")
    if not (p0 > 0):
        raise ValidationError(f"p0 must be positive, got {p0}")
    t = _eval_times(grid, tau)
    values = (p0 * sigma0) ** 2 * np.minimum.outer(t, t)
    return KernelMatrix(grid, values, kind="price_risk")


def mean_reversion_kernel(
    grid: TimeGrid, kappa: float, alpha: float, p0: float, tau: np.ndarray | None = None
) -> KernelMatrix:
    """OU covariance started from zero deviation, in currency^2.

    kappa must be strictly positive; the kappa -> 0 limit is the
    Brownian kernel, so use `brownian_kernel` for that case.
    """
    if not (kappa > 0):
        raise ValidationError("kappa must be strictly positive; use brownian_kernel for kappa = 0")
    if not (alpha > 0):
        raise ValidationError(f"alpha must be positive, got {alpha}")
    if not (p0 > 0):
        raise ValidationError(f"p0 must be positive, got {p0}")
    t = _eval_times(grid, tau)
    gap = np.abs(np.subtract.outer(t, t))
    younger = np.minimum.outer(t, t)
    values = (
        p0**2
        * alpha**2
        / (2.0 * kappa)
        * np.exp(-kappa * gap)
        * (1.0 - np.exp(-2.0 * kappa * younger))
    )
    return KernelMatrix(grid, values, kind="price_risk")


def asv_diffusion(delta: np.ndarray, sigma0: float, beta: float, cap: float) -> np.ndarray:
    """Local diffusion of the asymmetric-vol model.

    sigma0 on the upside; on the downside the vol is amplified by
    exp(beta * |delta|), hard-capped at ``cap`` times sigma0.
    """
    boost = np.exp(-beta * np.minimum(delta, 0.0))
    return sigma0 * np.minimum(boost, cap)


def _integration_nodes(grid: TimeGrid, substeps: int):
    """Euler node times plus indices of boundaries and midpoints.

    Each interval is split at its midpoint with ceil(substeps / 2)
    equal Euler steps per half, so midpoint states are simulated, not
    interpolated (odd counts are rounded up to the next even number).
    """
    per_half = (substeps + 1) // 2
    bounds = grid.boundaries
    mids = grid.midpoints
    times = [bounds[0]]
    boundary_idx = [0]
    midpoint_idx = []
    for k in range(grid.n):
        times.extend(np.linspace(bounds[k], mids[k], per_half + 1)[1:])
        midpoint_idx.append(len(times) - 1)
        times.extend(np.linspace(mids[k], bounds[k + 1], per_half + 1)[1:])
        boundary_idx.append(len(times) - 1)
    return np.asarray(times), np.asarray(boundary_idx), np.asarray(midpoint_idx)


def _simulate_block(
    spec: SDESpec, first_path: int, count: int, seed: int, dts: np.ndarray
) -> np.ndarray:
    """Euler states of ``count`` paths at every node, (count, n_nodes).

    Path p always consumes the stream keyed (seed, p), regardless of
    blocking or worker count.
    """
    n_steps = dts.size
    z = np.empty((count, n_steps))
    for row in range(count):
        key = np.array([seed, first_path + row], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        z[row] = rng.standard_normal(n_steps)
    out = np.empty((count, n_steps + 1))
    out[:, 0] = 0.0
    state = np.zeros(count)
    sqrt_dt = np.sqrt(dts)
    for j in range(n_steps):
        if spec.model == "brownian":
            state = state + spec.sigma0 * sqrt_dt[j] * z[:, j]
        elif spec.model == "mean_reversion":
            state = state - spec.kappa * state * dts[j] + spec.alpha * sqrt_dt[j] * z[:, j]
        else:  # asv
            vol = asv_diffusion(state, spec.sigma0, spec.beta, spec.cap)
            state = state + vol * sqrt_dt[j] * z[:, j]
        out[:, j + 1] = state
    return out


def simulate_paths(
    spec: SDESpec,
    grid: TimeGrid,
    n_paths: int,
    substeps: int = 10,
    seed: int = 0,
    max_workers: int | None = None,
) -> PathEnsemble:
    """Euler-Maruyama ensemble of deviation paths, started at zero.

    ``substeps`` is the Euler step count per grid interval. Every path
    draws from its own counter-based stream keyed by (seed, path
    index), so the ensemble is reproducible bit for bit for any worker
    count; ``max_workers`` defaults to POVSCHED_THREADS.
    """
    if n_paths < 1:
        raise ValidationError(f"n_paths must be at least 1, got {n_paths}")
    if substeps < 1:
        raise ValidationError(f"substeps must be at least 1, got {substeps}")
    if seed < 0 or int(seed) != seed:
        raise ValidationError(f"seed must be a non-negative integer, got {seed}")
    seed = int(seed)
    if max_workers is None:
        max_workers = thread_count()

    times, boundary_idx, midpoint_idx = _integration_nodes(grid, substeps)
    dts = np.diff(times)

    boundary_values = np.empty((n_paths, grid.n + 1))
    midpoint_values = np.empty((n_paths, grid.n))
    blocks = [
        (start, min(_PATH_BLOCK, n_paths - start)) for start in range(0, n_paths, _PATH_BLOCK)
    ]

    def run(block):
        start, count = block
        states = _simulate_block(spec, start, count, seed, dts)
        boundary_values[start : start + count] = states[:, boundary_idx]
        midpoint_values[start : start + count] = states[:, midpoint_idx]

    if max_workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            list(pool.map(run, blocks))
    else:
        for block in blocks:
            run(block)

    return PathEnsemble(
        spec=spec,
        grid=grid,
        seed=seed,
        substeps=substeps,
        n_paths=n_paths,
        boundary_values=boundary_values,
        midpoint_values=midpoint_values,
    )


def mc_estimate_kernel_repair(paths: PathEnsemble, p0: float) -> tuple[KernelMatrix, int, float]:
    """Kernel estimate plus its PSD-repair numbers.

    The estimator is p0^2 * mean_p(delta_p(tau_i) * delta_p(tau_j));
    the process starts at zero so no mean is subtracted. Negative
    eigenvalues from sampling noise are clipped to zero; returns the
    repaired kernel, how many eigenvalues were clipped and their total
    mass.
    """
    if not (p0 > 0):
        raise ValidationError(f"p0 must be positive, got {p0}")
    if paths.n_paths < 2:
        raise ValidationError("kernel estimation needs at least 2 paths")
    m = paths.midpoint_values
    raw = (p0**2 / paths.n_paths) * (m.T @ m)
    raw = 0.5 * (raw + raw.T)
    repaired, n_clipped, clipped_mass = project_psd(raw)
    return KernelMatrix(paths.grid, repaired, kind="price_risk"), n_clipped, clipped_mass


def mc_estimate_kernel(paths: PathEnsemble, p0: float) -> KernelMatrix:
    """PSD-repaired kernel estimate; see `mc_estimate_kernel_repair`."""
    kernel, _, _ = mc_estimate_kernel_repair(paths, p0)
    return kernel


def mc_kernel_stderr(paths: PathEnsemble, p0: float) -> np.ndarray:
    """Entrywise standard error of the `mc_estimate_kernel` mean."""
    if paths.n_paths < 2:
        raise ValidationError("standard errors need at least 2 paths")
    m = paths.midpoint_values
    n = paths.n_paths
    mean = (m.T @ m) / n
    sq = m * m
    second = (sq.T @ sq) / n
    var = np.maximum(second - mean**2, 0.0)
    return p0**2 * np.sqrt(var / n)


def combined_risk_kernel(
    price_kernel: KernelMatrix,
    spread_kernel: KernelMatrix | np.ndarray | None = None,
    alpha0: float = 0.0,
) -> KernelMatrix:
    """Total execution-risk kernel: price part plus alpha0^2 x spread part."""
    values = price_kernel.values.copy()
    if spread_kernel is not None and alpha0 != 0.0:
        if isinstance(spread_kernel, KernelMatrix):
            if not spread_kernel.grid.matches(price_kernel.grid):
                raise ValidationError("price and spread kernels live on different grids")
            sv = spread_kernel.values
        else:
            sv = np.asarray(spread_kernel, dtype=float)
            if sv.shape != values.shape:
                raise ValidationError("spread kernel shape does not match the price kernel")
        values = values + alpha0**2 * sv
    return KernelMatrix(price_kernel.grid, values, kind="combined_risk")


def check_psd(kernel: KernelMatrix | np.ndarray, tol: float = 1e-8) -> PsdReport:
    """Eigenvalue check: passes when min_eig >= -tol * max(max_eig, 1)."""
    values = kernel.values if isinstance(kernel, KernelMatrix) else np.asarray(kernel, dtype=float)
    eigs = np.linalg.eigvalsh(0.5 * (values + values.T))
    min_eig = float(eigs[0])
    max_eig = float(eigs[-1])
    return PsdReport(min_eig, max_eig, passed=min_eig >= -tol * max(max_eig, 1.0))


def project_psd(values: np.ndarray) -> tuple[np.ndarray, int, float]:
    """Clip negative eigenvalues to zero.

    Returns (repaired matrix, number of clipped eigenvalues, total
    clipped mass). Matrices that are already PSD come back unchanged.
    """
    sym = 0.5 * (values + values.T)
    eigs, vecs = np.linalg.eigh(sym)
    negative = eigs < 0.0
    n_clipped = int(np.count_nonzero(negative))
    if n_clipped == 0:
        return sym, 0, 0.0
    clipped_mass = float(-eigs[negative].sum())
    fixed = (vecs * np.maximum(eigs, 0.0)) @ vecs.T
    return 0.5 * (fixed + fixed.T), n_clipped, clipped_mass


def max_asymmetry(values: np.ndarray) -> tuple[float, int, int]:
    """Largest |K[i,j] - K[j,i]| and where it occurs."""
    dev = np.abs(values - values.T)
    flat = int(np.argmax(dev))
    i, j = divmod(flat, values.shape[1])
    return float(dev[i, j]), i, j


# ---------------------------------------------------------------------------
# CSV IO: header i,j,value with 0-based row-major indices, one row per
# matrix entry. This is the injection point for kernels estimated
# outside this package.
# ---------------------------------------------------------------------------


def save_kernel_csv(kernel: KernelMatrix | np.ndarray, path: str | Path) -> None:
    values = kernel.values if isinstance(kernel, KernelMatrix) else np.asarray(kernel, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "value"])
        n = values.shape[0]
        for i in range(n):
            for j in range(n):
                writer.writerow([i, j, f"{values[i, j]:.17g}"])


def read_kernel_csv(path: str | Path) -> np.ndarray:
    """Read a full square matrix; missing or duplicate entries are errors."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: no such file")
    entries: dict[tuple[int, int], float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if header != ["i", "j", "value"]:
            raise ValidationError(f"{path}: expected header 'i,j,value', got {','.join(header)!r}")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}: row {row_no}: expected 3 columns")
            try:
                i, j, v = int(row[0]), int(row[1]), float(row[2])
            except ValueError:
                raise ValidationError(f"{path}: row {row_no}: bad entry") from None
            if i < 0 or j < 0:
                raise ValidationError(f"{path}: row {row_no}: negative index")
            if (i, j) in entries:
                raise ValidationError(f"{path}: row {row_no}: duplicate entry ({i},{j})")
            entries[(i, j)] = v
    if not entries:
        raise ValidationError(f"{path}: no data rows")
    n = max(max(i, j) for i, j in entries) + 1
    if len(entries) != n * n:
        raise ValidationError(f"{path}: expected {n * n} entries for a {n}x{n} matrix, got {len(entries)}")
    values = np.empty((n, n))
    for (i, j), v in entries.items():
        values[i, j] = v
    return values

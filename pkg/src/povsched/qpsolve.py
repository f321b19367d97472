"""Dense QP solver for the scheduling problem.

The problem shape is fixed: minimize c'H + H'QH (no 1/2 on the
quadratic term) subject to one completion equality a'H = b and box
bounds, with Q symmetric PSD and strictly convex on the non-degenerate
coordinates. Sizes are a few hundred at most, so everything is dense.

The algorithm is a two-phase hybrid:

1. a handful of projected-gradient steps with exact line search, using
   Euclidean projection onto { a'H = b } intersect box (a continuous
   knapsack solved by bisection on the shift multiplier) to cheaply
   discover which caps the solution rides;
2. a primal active-set loop: with bound-active coordinates pinned, the
   equality-constrained subproblem on the free coordinates is solved
   through its KKT system, the step toward that minimizer is cut at
   the first blocking bound (the quadratic is convex, so the exact
   line minimum over the feasible segment sits at the far end), and
   bound multipliers with the wrong sign get released.

The problem is diagonally equilibrated (unit Q diagonal) before
solving, and unscaled after; KKT tolerances are quoted in the
equilibrated metric, which keeps them meaningful across instrument
scales. `kkt_residuals` applies the same equilibration, so audits and
solver status agree.

`brute_force_oracle` is an independent dense grid search used to
cross-check the solver on tiny instances; it shares no code with the
iterative path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .impact import QPProblem

__all__ = [
    "SolverSettings",
    "KKTReport",
    "QPSolution",
    "OracleResult",
    "solve",
    "kkt_residuals",
    "brute_force_oracle",
]

_BOUND_ACTIVE_TOL = 1e-9


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances and iteration budgets.

    tol_kkt bounds stationarity and complementarity in the
    equilibrated metric; completion_tol bounds |a'H - b| relative to
    |b|. max_iter of None lets the solver pick a budget from the
    problem size.
    """

    tol_kkt: float = 1e-8
    completion_tol: float = 1e-10
    max_iter: int | None = None
    pg_iters: int = 30


@dataclass(frozen=True)
class KKTReport:
    stationarity: float
    equality: float  # relative completion residual
    bound_violation: float
    complementarity: float


@dataclass(eq=False)
class QPSolution:
    """Solver output; kkt carries the same measures `kkt_residuals` reports."""

    h: np.ndarray
    objective: float
    kkt: KKTReport
    iterations: int
    status: str  # optimal | max_iter | infeasible
    objective_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    message: str = ""


@dataclass(eq=False)
class OracleResult:
    h: np.ndarray
    objective: float
    error_bound: float


# ---------------------------------------------------------------------------
# KKT audit
# ---------------------------------------------------------------------------


def _equilibration(q: np.ndarray) -> np.ndarray:
    diag = np.diag(q).copy()
    scale = np.ones_like(diag)
    good = diag > 0
    scale[good] = 1.0 / np.sqrt(diag[good])
    return scale


def _sign_violation(nu: float, g: np.ndarray, a: np.ndarray, s: np.ndarray,
                    at_lo: np.ndarray, at_up: np.ndarray) -> float:
    """Worst dual-sign violation, equilibrated, for a given equality multiplier."""
    lam = g - nu * a
    worst = 0.0
    if np.any(at_lo):
        worst = max(worst, float(np.max(np.maximum(-(s * lam)[at_lo], 0.0), initial=0.0)))
    if np.any(at_up):
        worst = max(worst, float(np.max(np.maximum((s * lam)[at_up], 0.0), initial=0.0)))
    return worst


def kkt_residuals(problem: QPProblem, h: np.ndarray) -> KKTReport:
    """First-order optimality measures of a candidate point.

    The equality multiplier is fitted by least squares on the inactive
    coordinates (or chosen to minimize dual-sign violation when every
    coordinate is at a bound). Stationarity and complementarity are
    reported in the equilibrated metric; equality is relative to |b|.
    """
    h = np.asarray(h, dtype=float)
    q, c, a = problem.Q, problem.c, problem.a_eq
    lo, up = problem.lower, problem.upper
    g = c + 2.0 * (q @ h)
    s = _equilibration(q)

    fixed = lo == up
    at_lo = (h - lo <= _BOUND_ACTIVE_TOL) & ~fixed
    at_up = (up - h <= _BOUND_ACTIVE_TOL) & ~fixed
    inactive = ~(at_lo | at_up | fixed)

    w = s**2  # LS in the equilibrated metric
    if np.any(inactive & (a != 0)):
        mask = inactive
        denom = float((w * a * a)[mask].sum())
        nu = float((w * a * g)[mask].sum()) / denom if denom > 0 else 0.0
    elif np.any(a != 0):
        # Everything pinned: pick the multiplier that best certifies the point.
        candidates = g[a != 0] / a[a != 0]
        best, best_v = 0.0, np.inf
        for cand in candidates:
            v = _sign_violation(float(cand), g, a, s, at_lo, at_up)
            if v < best_v - 1e-18:
                best, best_v = float(cand), v
        nu = best
    else:
        nu = 0.0

    resid = s * (g - nu * a)
    stationarity = float(np.max(np.abs(resid[inactive]), initial=0.0))
    complementarity = _sign_violation(nu, g, a, s, at_lo, at_up)
    scale_b = max(abs(problem.b_eq), 1e-300)
    equality = abs(float(a @ h) - problem.b_eq) / scale_b
    bound_violation = float(
        max(np.max(lo - h, initial=0.0), np.max(h - up, initial=0.0), 0.0)
    )
    return KKTReport(stationarity, equality, bound_violation, complementarity)


# ---------------------------------------------------------------------------
# Projection onto the feasible set
# ---------------------------------------------------------------------------


def _project_knapsack(z: np.ndarray, a: np.ndarray, b: float,
                      lo: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Euclidean projection onto { a'y = b, lo <= y <= up }, a >= 0.

    y(mu) = clip(z + mu a) makes a'y monotone in mu; bisect, then make
    the equality exact through the strictly interior coordinates.
    Assumes the set is non-empty.
    """
    y = np.clip(z, lo, up)
    pos = a > 0
    if not np.any(pos):
        return y
    target = b
    gap = (lo[pos] - z[pos]) / a[pos]
    mu_lo = float(np.min(gap))
    mu_hi = float(np.max((up[pos] - z[pos]) / a[pos]))

    def total(mu: float) -> float:
        return float(a[pos] @ np.clip(z[pos] + mu * a[pos], lo[pos], up[pos]))

    if total(mu_lo) > target:
        mu = mu_lo
    elif total(mu_hi) < target:
        mu = mu_hi
    else:
        for _ in range(120):
            mid = 0.5 * (mu_lo + mu_hi)
            if total(mid) < target:
                mu_lo = mid
            else:
                mu_hi = mid
        mu = 0.5 * (mu_lo + mu_hi)

    y = np.clip(z + mu * a, lo, up)
    # Exact completion: re-solve for the shift on the interior set.
    for _ in range(3):
        interior = pos & (y > lo) & (y < up)
        if not np.any(interior):
            break
        denom = float((a[interior] ** 2).sum())
        shortfall = target - float(a @ y) + float(a[interior] @ y[interior])
        shifted = (shortfall - float(a[interior] @ z[interior])) / denom
        y_new = y.copy()
        y_new[interior] = np.clip(z[interior] + shifted * a[interior], lo[interior], up[interior])
        if np.allclose(y_new, y, rtol=0.0, atol=0.0):
            break
        y = y_new
    return y


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


def _certificate(b: float, lo_sum: float, up_sum: float) -> str:
    return (
        f"completion target {b:.6g} outside the reachable range "
        f"[{lo_sum:.6g}, {up_sum:.6g}] implied by the bounds"
    )


def solve(
    problem: QPProblem,
    settings: SolverSettings | None = None,
    start: np.ndarray | None = None,
) -> QPSolution:
    """Solve the scheduling QP.

    ``start`` is an optional warm start in original units; infeasible
    starts are clipped and projected. The default start is the constant
    participation b / sum(a). The solution's status is decided by
    `kkt_residuals` against the configured tolerances, so
    status == "optimal" certifies the reported residuals.
    """
    if settings is None:
        settings = SolverSettings()
    n = problem.n
    lo_full, up_full = problem.lower, problem.upper
    fixed = lo_full == up_full
    free = ~fixed
    x_fix = lo_full[fixed]

    # Reduce out pinned coordinates (their value is forced by the bounds).
    q = problem.Q[np.ix_(free, free)]
    c = problem.c[free] + 2.0 * (problem.Q[np.ix_(free, fixed)] @ x_fix)
    a = problem.a_eq[free]
    lo = lo_full[free]
    up = up_full[free]
    b = problem.b_eq - float(problem.a_eq[fixed] @ x_fix)
    nf = int(free.sum())

    def embed(y: np.ndarray) -> np.ndarray:
        h = np.empty(n)
        h[fixed] = x_fix
        h[free] = y
        return h

    def finish(y: np.ndarray, iterations: int, history: list[float],
               forced_status: str | None = None, message: str = "") -> QPSolution:
        h = embed(y)
        # Make completion exact through interior coordinates; the shift is
        # at rounding scale so stationarity is not disturbed.
        interior = free & (h > lo_full + 0.0) & (h < up_full - 0.0)
        mask = interior & (problem.a_eq > 0)
        if np.any(mask):
            gap = problem.b_eq - float(problem.a_eq @ h)
            h[mask] += gap * problem.a_eq[mask] / float((problem.a_eq[mask] ** 2).sum())
            np.clip(h, lo_full, up_full, out=h)
        report = kkt_residuals(problem, h)
        if forced_status is not None:
            status = forced_status
        else:
            ok = (
                report.stationarity <= settings.tol_kkt
                and report.complementarity <= settings.tol_kkt
                and report.equality <= settings.completion_tol
                and report.bound_violation <= _BOUND_ACTIVE_TOL
            )
            status = "optimal" if ok else "max_iter"
            if not ok and not message:
                message = (
                    f"stopped with stationarity {report.stationarity:.3g}, "
                    f"complementarity {report.complementarity:.3g}, "
                    f"equality {report.equality:.3g}"
                )
        return QPSolution(
            h=h,
            objective=problem.objective(h),
            kkt=report,
            iterations=iterations,
            status=status,
            objective_history=np.asarray(history),
            message=message,
        )

    if nf == 0:
        h = embed(np.zeros(0))
        gap = abs(float(problem.a_eq @ h) - problem.b_eq)
        if gap > 1e-9 * max(1.0, abs(problem.b_eq)):
            return finish(np.zeros(0), 0, [], forced_status="infeasible",
                          message="all coordinates pinned, completion unreachable")
        return finish(np.zeros(0), 0, [problem.objective(h)])

    # Feasibility of the completion target.
    lo_sum = float(a @ lo)
    up_sum = float(a @ up)
    tol_f = 1e-9 * max(1.0, abs(b))
    if b > up_sum + tol_f or b < lo_sum - tol_f:
        y = np.clip(np.full(nf, b / max(float(a.sum()), 1e-300)), lo, up)
        return finish(y, 0, [], forced_status="infeasible",
                      message=_certificate(b, lo_sum, up_sum))
    if up_sum - b <= tol_f:
        # The cap is exactly binding everywhere: unique feasible point.
        return finish(up.copy(), 0, [problem.objective(embed(up))])
    if b - lo_sum <= tol_f:
        return finish(lo.copy(), 0, [problem.objective(embed(lo))])

    # Diagonal equilibration.
    s = _equilibration(q)
    qs = (s[:, None] * q) * s[None, :]
    cs = s * c
    as_ = s * a
    los = lo / s
    ups = up / s

    def f_scaled(y: np.ndarray) -> float:
        return float(cs @ y + y @ qs @ y)

    if start is not None:
        start = np.asarray(start, dtype=float)
        if start.shape != (n,):
            raise ValidationError(f"warm start has {start.size} entries, expected {n}")
        y = np.clip(start[free], lo, up) / s
    else:
        y = np.clip(np.full(nf, b / max(float(a.sum()), 1e-300)), lo, up) / s
    y = _project_knapsack(y, as_, b, los, ups)

    history: list[float] = [f_scaled(y)]
    iterations = 0
    max_iter = settings.max_iter if settings.max_iter is not None else 100 + 10 * nf

    # Phase 1: projected gradient with exact line search.
    row_norm = float(np.max(np.abs(qs).sum(axis=1)))
    step = 1.0 / max(2.0 * row_norm, 1e-300)
    for _ in range(settings.pg_iters):
        g = cs + 2.0 * (qs @ y)
        trial = _project_knapsack(y - step * g, as_, b, los, ups)
        d = trial - y
        dmax = float(np.max(np.abs(d)))
        if dmax <= 1e-14 * max(1.0, float(np.max(np.abs(y)))):
            break
        slope = float(g @ d)
        curv = float(d @ qs @ d)
        alpha = 1.0 if curv <= 0 else min(1.0, max(0.0, -slope / (2.0 * curv)))
        if alpha == 0.0:
            break
        y = y + alpha * d
        if alpha == 1.0:
            y = trial  # keep bound-active coordinates exactly on their bounds
        iterations += 1
        history.append(f_scaled(y))

    # Phase 2: primal active set.
    y = _project_knapsack(y, as_, b, los, ups)
    at_lo = y <= los
    at_up = y >= ups
    np.putmask(y, at_lo, los)
    np.putmask(y, at_up, ups)
    stalls = 0
    no_release = np.zeros(nf, dtype=bool)

    while iterations < max_iter:
        iterations += 1
        fw = ~(at_lo | at_up)
        idx = np.nonzero(fw)[0]
        pinned_sum = float(as_[at_lo] @ y[at_lo]) + float(as_[at_up] @ y[at_up])
        moved = False

        if idx.size > 0:
            qff = qs[np.ix_(idx, idx)]
            rhs_c = cs[idx] + 2.0 * (qs[np.ix_(idx, ~fw)] @ y[~fw])
            k = np.zeros((idx.size + 1, idx.size + 1))
            k[:-1, :-1] = 2.0 * qff
            k[:-1, -1] = as_[idx]
            k[-1, :-1] = as_[idx]
            rhs = np.concatenate((-rhs_c, [b - pinned_sum]))
            try:
                sol = np.linalg.solve(k, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(k, rhs, rcond=None)[0]
            target = sol[:-1]
            p = target - y[idx]
            pmax = float(np.max(np.abs(p)))
            if pmax > 1e-13 * max(1.0, float(np.max(np.abs(y)))):
                # Ratio test: cut the step at the first blocking bound.
                alpha = 1.0
                blockers: list[tuple[int, bool]] = []
                with np.errstate(divide="ignore", invalid="ignore"):
                    room_up = np.where(p > 0, (ups[idx] - y[idx]) / p, np.inf)
                    room_lo = np.where(p < 0, (los[idx] - y[idx]) / p, np.inf)
                room = np.minimum(room_up, room_lo)
                amin = float(np.min(room, initial=np.inf))
                if amin < 1.0:
                    alpha = max(amin, 0.0)
                    hits = np.nonzero(room <= alpha + 1e-15)[0]
                    blockers = [(int(idx[j]), bool(p[j] > 0)) for j in hits]
                y[idx] = y[idx] + alpha * p
                for j, upper_side in blockers:
                    if upper_side:
                        y[j] = ups[j]
                        at_up[j] = True
                    else:
                        y[j] = los[j]
                        at_lo[j] = True
                moved = alpha > 0.0
                history.append(f_scaled(y))
                no_release[:] = False
                stalls = 0
                if alpha >= 1.0 and not blockers:
                    moved = False  # reached the subproblem minimizer; check duals
                if moved:
                    continue

        # At the current working set's minimizer: examine bound multipliers.
        g = cs + 2.0 * (qs @ y)
        if idx.size > 0:
            denom = float((as_[idx] ** 2).sum())
            nu = float(as_[idx] @ g[idx]) / denom if denom > 0 else 0.0
        else:
            pos = as_ > 0
            nu = float(np.median(g[pos] / as_[pos])) if np.any(pos) else 0.0
        lam = g - nu * as_
        viol_lo = np.where(at_lo & ~no_release, -lam, -np.inf)
        viol_up = np.where(at_up & ~no_release, lam, -np.inf)
        worst = np.maximum(viol_lo, viol_up)
        j = int(np.argmax(worst))
        if worst[j] <= settings.tol_kkt:
            history.append(f_scaled(y))
            break
        # Release the worst violator and re-optimize.
        released_from_up = bool(at_up[j])
        at_lo[j] = False
        at_up[j] = False
        stalls += 1
        if stalls > nf + 2:
            # Degenerate tie: forbid immediate re-release to avoid cycling.
            no_release[j] = True
            if released_from_up:
                at_up[j] = True
            else:
                at_lo[j] = True
            stalls = 0

    return finish(s * y, iterations, history)


# ---------------------------------------------------------------------------
# Grid-search oracle
# ---------------------------------------------------------------------------


def brute_force_oracle(
    problem: QPProblem, resolution: int = 101, refine: int = 0
) -> OracleResult:
    """Exhaustive grid search for tiny instances (at most 4 free vars).

    One free coordinate is eliminated through the completion equality;
    the rest are swept on a uniform grid, ``refine`` times re-gridded
    around the best point at shrinking width. The reported error bound
    is a Lipschitz bound on how far the best grid value can sit above
    the true optimum.
    """
    if resolution < 2:
        raise ValidationError(f"resolution must be at least 2, got {resolution}")
    lo_full, up_full = problem.lower, problem.upper
    fixed = lo_full == up_full
    free_idx = np.nonzero(~fixed)[0]
    k = free_idx.size
    if k == 0:
        h = lo_full.copy()
        return OracleResult(h, problem.objective(h), 0.0)
    if k > 4:
        raise ValidationError(f"oracle handles at most 4 free coordinates, got {k}")
    a = problem.a_eq
    if not np.all(a[free_idx] > 0):
        raise ValidationError("oracle needs positive equality coefficients on free coordinates")
    # Eliminate the best-conditioned coordinate.
    elim = free_idx[int(np.argmax(a[free_idx]))]
    sweep = np.array([i for i in free_idx if i != elim], dtype=int)
    b_fix = float(a[fixed] @ lo_full[fixed])

    lo_box = lo_full[sweep].copy()
    up_box = up_full[sweep].copy()
    best_h: np.ndarray | None = None
    best_obj = np.inf
    spacing = np.zeros(sweep.size)

    for round_no in range(refine + 1):
        if sweep.size == 0:
            grids = [np.zeros((1, 0))]
            points = np.zeros((1, 0))
        else:
            axes = [np.linspace(lo_box[j], up_box[j], resolution) for j in range(sweep.size)]
            mesh = np.meshgrid(*axes, indexing="ij")
            points = np.stack([m.ravel() for m in mesh], axis=1)
        if points.shape[0] > 20_000_000:
            raise ValidationError("oracle grid too large; lower the resolution")
        h_elim = (problem.b_eq - b_fix - points @ a[sweep]) / a[elim]
        ok = (h_elim >= lo_full[elim] - 1e-12) & (h_elim <= up_full[elim] + 1e-12)
        if not np.any(ok):
            raise ValidationError(
                "no grid point satisfies the completion equality; raise the resolution"
            )
        pts = points[ok]
        he = np.clip(h_elim[ok], lo_full[elim], up_full[elim])
        m = pts.shape[0]
        full = np.tile(lo_full, (m, 1))
        full[:, sweep] = pts
        full[:, elim] = he
        vals = full @ problem.c + np.einsum("ij,ij->i", full @ problem.Q, full)
        j = int(np.argmin(vals))
        if vals[j] < best_obj:
            best_obj = float(vals[j])
            best_h = full[j].copy()
        spacing = (up_box - lo_box) / (resolution - 1) if sweep.size else spacing
        if round_no < refine and sweep.size:
            center = best_h[sweep]
            width = 4.0 * spacing
            lo_box = np.maximum(center - width, lo_full[sweep])
            up_box = np.minimum(center + width, up_full[sweep])

    assert best_h is not None
    # Lipschitz error bound: worst gradient over the box times the grid cell.
    bound_mag = np.maximum(np.abs(lo_full), np.abs(up_full))
    grad_bound = np.abs(problem.c) + 2.0 * np.abs(problem.Q) @ bound_mag
    move = np.zeros(problem.n)
    if sweep.size:
        move[sweep] = spacing / 2.0
        move[elim] = float(a[sweep] @ (spacing / 2.0)) / a[elim]
    error_bound = float(grad_bound @ move)
    return OracleResult(best_h, best_obj, error_bound)

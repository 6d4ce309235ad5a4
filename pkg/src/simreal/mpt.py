"""Mean-variance machinery: variance, covariance estimation, constrained solvers.

The solver is a projected-gradient method on ``w' C w`` whose projection onto
``{sum(w) = 1, mu'w = target, lo <= w <= hi}`` is computed by Dykstra's
alternating projections between the affine set and the box. Once the
iterates settle, the active set is read off and the equality-constrained KKT
system on the free variables is solved directly; the polished point is kept
only if it is primal feasible and dual feasible.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ReturnMatrix
from .errors import DimensionMismatch, Infeasible, InsufficientData, NotConverged

logger = logging.getLogger(__name__)

SUM_TOL = 1e-9
ACTIVE_TOL = 1e-9
POLISH_TOLERANCES = (ACTIVE_TOL, 1e-7, 1e-5, 1e-3)


@dataclass(frozen=True)
class CovarianceEstimate:
    matrix: np.ndarray
    tickers: tuple[str, ...] = ()
    repaired: bool = False

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"covariance must be square, got {m.shape}")
        if not np.allclose(m, m.T, rtol=0, atol=1e-12):
            raise ValueError("covariance matrix is not symmetric")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        tickers = tuple(self.tickers) or tuple(f"A{i}" for i in range(m.shape[0]))
        if len(tickers) != m.shape[0]:
            raise DimensionMismatch("tickers do not match covariance size")
        object.__setattr__(self, "tickers", tickers)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    tickers: tuple[str, ...] = ()

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if abs(w.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"weights sum to {w.sum():.12g}, expected 1")
        if np.any(w < -SUM_TOL) or np.any(w > 1 + SUM_TOL):
            raise ValueError("weights must lie in [0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        tickers = tuple(self.tickers) or tuple(f"A{i}" for i in range(w.size))
        if len(tickers) != w.size:
            raise DimensionMismatch("tickers do not match weight length")
        object.__setattr__(self, "tickers", tickers)

    def __len__(self) -> int:
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)

    def support(self, tol: float = 1e-10) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.weights > tol))


def _cov_matrix(cov) -> np.ndarray:
    return cov.matrix if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)


def _weights(w) -> np.ndarray:
    return w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=float).reshape(-1)


def portfolio_variance(w, cov) -> float:
    """Double sum ``sum_ij w_i w_j cov_ij``; rounding below zero is clamped."""
    w = _weights(w)
    c = _cov_matrix(cov)
    if c.shape != (w.size, w.size):
        raise DimensionMismatch(f"weights of length {w.size} vs covariance {c.shape}")
    v = float(w @ c @ w)
    if v < 0:
        if v < -1e-12:
            logger.warning("portfolio variance %.3e below zero; covariance not PSD?", v)
        v = 0.0
    return v


def repair_psd(matrix: np.ndarray) -> tuple[np.ndarray, bool]:
    """Clip negative eigenvalues at zero. Returns (matrix, changed)."""
    m = 0.5 * (matrix + matrix.T)
    if m.size == 0 or not np.any(m):
        return m, False
    vals, vecs = np.linalg.eigh(m)
    tol = m.shape[0] * np.finfo(float).eps * np.max(np.abs(vals))
    if vals.min() >= -tol:
        return m, False
    fixed = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return 0.5 * (fixed + fixed.T), True


def estimate_covariance(returns: ReturnMatrix | np.ndarray, repair: bool = True) -> CovarianceEstimate:
    if isinstance(returns, ReturnMatrix):
        x, tickers = returns.values, returns.tickers
    else:
        x, tickers = np.asarray(returns, dtype=float), ()
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientData(f"need at least 2 rows to estimate covariance, got {x.shape[0]}")
    centered = x - x.mean(axis=0)
    m = centered.T @ centered / (x.shape[0] - 1)
    m = 0.5 * (m + m.T)
    changed = False
    if repair:
        m, changed = repair_psd(m)
    return CovarianceEstimate(m, tickers, changed)


def diversification_floor(cov) -> float:
    """Smallest single-asset variance: the level diversification cannot beat."""
    c = _cov_matrix(cov)
    if c.size == 0:
        raise DimensionMismatch("empty covariance")
    return float(np.min(np.diag(c)))


# --- problem definition -----------------------------------------------------

@dataclass(frozen=True)
class MvoProblem:
    mu: np.ndarray
    cov: CovarianceEstimate
    target_return: float | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    max_assets: int | None = None

    def __post_init__(self):
        cov = self.cov if isinstance(self.cov, CovarianceEstimate) else CovarianceEstimate(self.cov)
        object.__setattr__(self, "cov", cov)
        n = cov.n
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if mu.size != n:
            raise DimensionMismatch(f"mu has length {mu.size}, covariance is {n}x{n}")
        lo = np.zeros(n) if self.lower is None else np.broadcast_to(np.asarray(self.lower, float), (n,)).copy()
        hi = np.ones(n) if self.upper is None else np.broadcast_to(np.asarray(self.upper, float), (n,)).copy()
        if np.any(lo > hi):
            raise Infeasible("some lower bound exceeds its upper bound")
        if np.any(lo < 0) or np.any(hi > 1):
            raise ValueError("bounds must lie within [0, 1] (long-only, no leverage)")
        if lo.sum() > 1 + 1e-12 or hi.sum() < 1 - 1e-12:
            raise Infeasible(f"bounds cannot sum to one (sum lower={lo.sum():.6g}, sum upper={hi.sum():.6g})")
        if self.target_return is not None:
            t = float(self.target_return)
            if not mu.min() - 1e-12 <= t <= mu.max() + 1e-12:
                raise Infeasible(f"target {t:.6g} outside [{mu.min():.6g}, {mu.max():.6g}]")
            object.__setattr__(self, "target_return", t)
        if self.max_assets is not None and not 1 <= self.max_assets <= n:
            raise ValueError(f"max_assets must be in [1, {n}]")
        for name, arr in (("mu", mu), ("lower", lo), ("upper", hi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.cov.n

    def objective(self, w) -> float:
        return portfolio_variance(w, self.cov)

    def restrict(self, support: Sequence[int]) -> "MvoProblem":
        idx = list(support)
        sub = CovarianceEstimate(self.cov.matrix[np.ix_(idx, idx)],
                                 tuple(self.cov.tickers[i] for i in idx))
        return MvoProblem(self.mu[idx], sub, self.target_return,
                          self.lower[idx], self.upper[idx], None)


def return_range(mu: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> tuple[float, float]:
    """Min and max of ``mu'w`` over the bounded simplex (greedy fill, exact)."""
    def fill(order):
        w = lower.astype(float).copy()
        room = 1.0 - w.sum()
        for i in order:
            add = min(upper[i] - w[i], room)
            w[i] += add
            room -= add
            if room <= 0:
                break
        return float(mu @ w)

    order = np.argsort(mu, kind="stable")
    return fill(order), fill(order[::-1])


# --- projection -------------------------------------------------------------

class _FeasibleSet:
    """Affine constraints ``A w = b`` intersected with a box."""

    def __init__(self, A: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray):
        self.A, self.b, self.lo, self.hi = A, b, lo, hi
        self._pinv = np.linalg.pinv(A)

    def affine(self, y: np.ndarray) -> np.ndarray:
        return y - self._pinv @ (self.A @ y - self.b)

    def project(self, y: np.ndarray, tol: float = 1e-14, max_iter: int = 20_000) -> np.ndarray:
        """Dykstra's algorithm; the returned point satisfies the box exactly."""
        x = np.clip(y, self.lo, self.hi)
        if np.max(np.abs(self.A @ x - self.b)) <= tol:
            return x
        x = y.copy()
        p = np.zeros_like(y)
        q = np.zeros_like(y)
        for _ in range(max_iter):
            z = self.affine(x + p)
            p = x + p - z
            x_new = np.clip(z + q, self.lo, self.hi)
            q = z + q - x_new
            step = np.max(np.abs(x_new - x))
            x = x_new
            if step <= tol and np.max(np.abs(self.A @ x - self.b)) <= 1e-13:
                break
        return x

    def violation(self, w: np.ndarray) -> float:
        box = max(float(np.max(self.lo - w)), float(np.max(w - self.hi)), 0.0)
        return max(box, float(np.max(np.abs(self.A @ w - self.b))))


def _constraints(problem: MvoProblem) -> _FeasibleSet:
    n = problem.n
    rows, rhs = [np.ones(n)], [1.0]
    if problem.target_return is not None and np.ptp(problem.mu) > 0:
        rows.append(problem.mu)
        rhs.append(problem.target_return)
    return _FeasibleSet(np.vstack(rows), np.array(rhs), problem.lower, problem.upper)


def kkt_residual(problem: MvoProblem, w: np.ndarray) -> float:
    """Largest violation of stationarity, dual sign and primal feasibility."""
    fs = _constraints(problem)
    g = 2.0 * problem.cov.matrix @ w
    at_lo = w <= fs.lo + ACTIVE_TOL
    at_hi = (w >= fs.hi - ACTIVE_TOL) & ~at_lo
    free = ~(at_lo | at_hi)
    if not free.any():
        # a vertex of the feasible set; it is the whole set whenever bounds pin it
        return fs.violation(w)
    nu = np.linalg.lstsq(fs.A[:, free].T, -g[free], rcond=None)[0]
    d = g + fs.A.T @ nu
    parts = [fs.violation(w), float(np.max(np.abs(d[free])))]
    if at_lo.any():
        parts.append(float(np.max(np.clip(-d[at_lo], 0, None))))
    if at_hi.any():
        parts.append(float(np.max(np.clip(d[at_hi], 0, None))))
    return max(parts)


def _polish(problem: MvoProblem, fs: _FeasibleSet, w: np.ndarray,
            active_tol: float = ACTIVE_TOL) -> np.ndarray | None:
    """Exact solve on the free set implied by ``w``'s active bounds."""
    n = w.size
    at_lo = w <= fs.lo + active_tol
    at_hi = (w >= fs.hi - active_tol) & ~at_lo
    free = ~(at_lo | at_hi)
    fixed = np.where(at_lo, fs.lo, np.where(at_hi, fs.hi, 0.0))
    nf = int(free.sum())
    if nf == 0:
        return fixed if fs.violation(fixed) <= 1e-12 else None
    C = problem.cov.matrix
    Af = fs.A[:, free]
    m = Af.shape[0]
    K = np.zeros((nf + m, nf + m))
    K[:nf, :nf] = 2.0 * C[np.ix_(free, free)]
    K[:nf, nf:] = Af.T
    K[nf:, :nf] = Af
    rhs = np.concatenate([-2.0 * C[np.ix_(free, ~free)] @ fixed[~free],
                          fs.b - fs.A[:, ~free] @ fixed[~free]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    cand = fixed.copy()
    cand[free] = sol[:nf]
    if np.any(cand < fs.lo - 1e-12) or np.any(cand > fs.hi + 1e-12):
        return None
    cand = np.clip(cand, fs.lo, fs.hi)
    if fs.violation(cand) > 1e-12 or n != cand.size:
        return None
    return cand


@dataclass(frozen=True)
class SolveInfo:
    iterations: int
    kkt_residual: float
    violation: float
    polished: bool


def solve_mvo_detailed(problem: MvoProblem, *, tol: float = 1e-10,
                       max_iter: int = 100_000) -> tuple[WeightVector, SolveInfo]:
    lo_r, hi_r = return_range(problem.mu, problem.lower, problem.upper)
    if problem.target_return is not None:
        t = problem.target_return
        if not lo_r - 1e-12 <= t <= hi_r + 1e-12:
            raise Infeasible(f"target {t:.6g} unreachable under bounds; range [{lo_r:.6g}, {hi_r:.6g}]")
    fs = _constraints(problem)
    C = problem.cov.matrix
    n = problem.n
    w = fs.project(np.full(n, 1.0 / n))
    lam = float(np.linalg.eigvalsh(C)[-1]) if n else 0.0
    iterations = 0
    if lam > 0:
        step = 1.0 / (2.0 * lam + 1e-12)
        for iterations in range(1, max_iter + 1):
            w_new = fs.project(w - step * 2.0 * (C @ w))
            delta = np.max(np.abs(w_new - w))
            w = w_new
            if delta < tol:
                break
    # A KKT-certified candidate is the global optimum (convex problem). Looser
    # active-set guesses rescue slow projections, e.g. a target pinned to a vertex.
    polished = False
    for active_tol in POLISH_TOLERANCES:
        cand = _polish(problem, fs, w, active_tol)
        if cand is not None and kkt_residual(problem, cand) <= 1e-9:
            w, polished = cand, True
            break
    res = kkt_residual(problem, w)
    viol = fs.violation(w)
    if viol > 1e-8 and problem.target_return is not None and abs(hi_r - lo_r) < 1e-12:
        raise Infeasible("target return pins a degenerate feasible set")
    if res > 1e-6 or viol > 1e-8:
        raise NotConverged(f"solve_mvo stopped after {iterations} iterations", max(res, viol))
    # normalize away the last ulp of budget drift without leaving the box
    w = np.clip(w, problem.lower, problem.upper)
    return WeightVector(w, problem.cov.tickers), SolveInfo(iterations, res, viol, polished)


def solve_mvo(problem: MvoProblem, **kwargs) -> WeightVector:
    """Minimum-variance weights under budget, optional target return and box bounds."""
    return solve_mvo_detailed(problem, **kwargs)[0]


# --- cardinality ------------------------------------------------------------

def _solve_on(problem: MvoProblem, support: Sequence[int]) -> np.ndarray:
    support = sorted(support)
    sub = problem.restrict(support)
    w = np.zeros(problem.n)
    w[support] = solve_mvo(sub).weights
    return w


def solve_mvo_cardinality(problem: MvoProblem, *, local_search: bool = True) -> WeightVector:
    """At most ``max_assets`` holdings via iterative pruning plus a swap pass.

    Pruning removes the smallest-weight holding and re-solves on what is left;
    ties go to the asset with the larger variance, then to the later ticker.
    The swap pass then exchanges held for excluded assets (singly, then in
    pairs) while that strictly lowers variance.
    """
    n = problem.n
    k = problem.max_assets or n
    forced = set(np.flatnonzero(problem.lower > 0).tolist())
    if len(forced) > k:
        raise Infeasible(f"{len(forced)} assets have positive lower bounds but max_assets={k}")
    var = np.diag(problem.cov.matrix)
    C = problem.cov.matrix

    def objective(w):
        return float(w @ C @ w)

    def support_of(w, allowed):
        return set(i for i in allowed if w[i] > 1e-10) | forced

    allowed = set(range(n))
    w = _solve_on(problem, sorted(allowed))
    support = support_of(w, allowed)
    while len(support) > k:
        order = sorted((i for i in support if i not in forced),
                       key=lambda i: (round(w[i], 12), -var[i], -i))
        for i in order:
            try:
                w_try = _solve_on(problem, sorted(support - {i}))
            except Infeasible:
                continue
            w, support = w_try, support_of(w_try, support - {i})
            break
        else:
            raise Infeasible(f"no support of size {k} admits a feasible portfolio")

    best, best_obj = w, objective(w)
    if local_search and k < n:
        # first-improvement exchanges; pairs are tried only once single swaps stall,
        # since a target return can make every one-swap neighbour infeasible
        size = 1
        while size <= 2:
            movable = sorted(i for i in support if i not in forced)
            out = [j for j in range(n) if j not in support]
            improved = False
            for drop in combinations(movable, size):
                for add in combinations(out, size):
                    cand_support = (support - set(drop)) | set(add)
                    try:
                        w_try = _solve_on(problem, sorted(cand_support))
                    except Infeasible:
                        continue
                    obj = objective(w_try)
                    if obj < best_obj * (1 - 1e-12) - 1e-18:
                        best, best_obj = w_try, obj
                        support = support_of(w_try, cand_support)
                        improved = True
                        break
                if improved:
                    break
            size = 1 if improved else size + 1
    return WeightVector(np.clip(best, problem.lower, problem.upper), problem.cov.tickers)


def best_subset_exhaustive(problem: MvoProblem) -> tuple[WeightVector, tuple[int, ...]]:
    """Reference: solve on every support of size ``max_assets`` (small n only)."""
    k = problem.max_assets or problem.n
    best = None
    for support in combinations(range(problem.n), k):
        if any(problem.lower[i] > 0 for i in set(range(problem.n)) - set(support)):
            continue
        try:
            w = _solve_on(problem, support)
        except Infeasible:
            continue
        obj = problem.objective(w)
        if best is None or obj < best[0]:
            best = (obj, w, support)
    if best is None:
        raise Infeasible("no feasible support")
    return WeightVector(best[1], problem.cov.tickers), best[2]


# --- frontier ---------------------------------------------------------------

@dataclass(frozen=True)
class FrontierPoint:
    target_return: float
    variance: float
    weights: WeightVector | None
    error: str | None = None


def efficient_frontier(mu, cov, n_points: int = 20, bounds=None) -> list[FrontierPoint]:
    """Minimum-variance portfolios for targets evenly spaced over the feasible return range."""
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    lower, upper = (None, None) if bounds is None else bounds
    base = MvoProblem(mu, cov, None, lower, upper)
    lo_r, hi_r = return_range(base.mu, base.lower, base.upper)
    points = []
    for t in np.linspace(lo_r, hi_r, n_points):
        try:
            prob = MvoProblem(base.mu, base.cov, float(t), base.lower, base.upper)
            w = solve_mvo(prob)
            points.append(FrontierPoint(float(t), prob.objective(w), w))
        except (Infeasible, NotConverged) as exc:
            logger.warning("frontier point at target %.6g failed: %s", t, exc)
            points.append(FrontierPoint(float(t), float("nan"), None, f"{type(exc).__name__}: {exc}"))
    return points


def write_frontier_csv(points: Sequence[FrontierPoint], tickers: Sequence[str], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_return", "variance", *[f"w_{t}" for t in tickers]])
        for p in points:
            ws = p.weights.weights.tolist() if p.weights is not None else [""] * len(tickers)
            w.writerow([repr(p.target_return), repr(p.variance), *[repr(x) if x != "" else "" for x in ws]])

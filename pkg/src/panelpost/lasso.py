"""Weighted lasso by cyclic coordinate descent on a CSC design.

Objective: ``0.5 * ||y - Z b||^2 + mu * sum_l w_l |b_l|``. With the 1/2 factor
the stationarity condition reads ``Z_l'(y - Z b) = mu w_l sign(b_l)`` on the
active set and ``|Z_l'(y - Z b)| <= mu w_l`` off it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .panel_core import DesignSystem

__all__ = [
    "SolverOptions",
    "LassoFit",
    "CVResult",
    "soft_threshold",
    "main_penalty_weights",
    "objective",
    "kkt_violation",
    "solve_lasso",
    "fit_weighted_lasso",
    "default_mu_grid",
    "cluster_folds",
    "cv_path_errors",
    "cv_select_mu",
]


@dataclass(frozen=True)
class SolverOptions:
    max_sweeps: int = 10_000
    tol: float = 1e-7
    # certificate tolerance, scaled by (1 + ||Z'y||_inf)
    kkt_tol: float = 1e-7


@dataclass
class LassoFit:
    eta_hat: np.ndarray
    residuals: np.ndarray
    active_set: np.ndarray
    mu: float
    objective_value: float
    iterations: int
    converged: bool
    objective_trace: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)


def soft_threshold(z: float, t: float) -> float:
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    return math.copysign(max(abs(z) - t, 0.0), z)


def main_penalty_weights(sys: DesignSystem) -> np.ndarray:
    """Identity loadings: 1 on x/time block, 1/sqrt(N) on i-block, 1/sqrt(M) on j-block."""
    return sys.penalty_weights()


_ANDERSON_K = 5


@numba.njit(cache=True)
def _objective_at(indptr, indices, data, y, beta, w, mu, skip, resid_out):
    resid_out[:] = y
    for j in range(beta.shape[0]):
        b = beta[j]
        if b != 0.0:
            for q in range(indptr[j], indptr[j + 1]):
                resid_out[indices[q]] -= b * data[q]
    rss = 0.0
    for r in range(y.shape[0]):
        rss += resid_out[r] * resid_out[r]
    pen = 0.0
    for j in range(beta.shape[0]):
        if j != skip:
            pen += w[j] * abs(beta[j])
    return 0.5 * rss + mu * pen


@numba.njit(cache=True)
def _anderson_weights(hist, K):
    """Weights c (sum 1) minimizing ||sum_k c_k (b_{k+1} - b_k)|| over the last K differences."""
    p = hist.shape[1]
    U = np.empty((K, p))
    for k in range(K):
        for j in range(p):
            U[k, j] = hist[k + 1, j] - hist[k, j]
    A = U @ U.T
    tr = 0.0
    for k in range(K):
        tr += A[k, k]
    for k in range(K):
        A[k, k] += 1e-10 * tr + 1e-300
    z = np.linalg.solve(A, np.ones(K))
    return z / z.sum()


@numba.njit(cache=True)
def _cd_sweeps(indptr, indices, data, colsq, y, resid, beta, w, mu, skip,
               max_sweeps, tol, trace, start):
    """Run coordinate-descent sweeps in place; returns (sweeps used, converged).

    Alternates full sweeps with sweeps restricted to the current support; only
    a full sweep with sup-norm change below tolerance ends the loop. Every few
    sweeps an Anderson extrapolation of recent iterates is tried and kept only
    if it lowers the objective.
    """
    p = beta.shape[0]
    n = resid.shape[0]
    K = _ANDERSON_K
    hist = np.empty((K + 1, p))
    n_hist = 0
    trial = np.empty(p)
    trial_resid = np.empty(n)
    active_only = False
    s = start
    while s < max_sweeps:
        max_change = 0.0
        for j in range(p):
            if j == skip or colsq[j] == 0.0:
                continue
            old = beta[j]
            if active_only and old == 0.0:
                continue
            g = 0.0
            for q in range(indptr[j], indptr[j + 1]):
                g += data[q] * resid[indices[q]]
            z = g + colsq[j] * old
            thr = mu * w[j]
            if z > thr:
                new = (z - thr) / colsq[j]
            elif z < -thr:
                new = (z + thr) / colsq[j]
            else:
                new = 0.0
            if new != old:
                d = new - old
                for q in range(indptr[j], indptr[j + 1]):
                    resid[indices[q]] -= d * data[q]
                beta[j] = new
                if abs(d) > max_change:
                    max_change = abs(d)
        rss = 0.0
        for r in range(n):
            rss += resid[r] * resid[r]
        pen = 0.0
        bmax = 0.0
        for j in range(p):
            if j != skip:
                pen += w[j] * abs(beta[j])
            if abs(beta[j]) > bmax:
                bmax = abs(beta[j])
        obj = 0.5 * rss + mu * pen
        trace[s] = obj
        s += 1
        if max_change < tol * (1.0 + bmax):
            n_hist = 0
            if active_only:
                active_only = False
            else:
                return s, True
            continue
        if not active_only:
            active_only = True
            n_hist = 0
            continue
        hist[n_hist, :] = beta
        n_hist += 1
        if n_hist == K + 1:
            n_hist = 0
            c = _anderson_weights(hist, K)
            for j in range(p):
                acc = 0.0
                for k in range(K):
                    acc += c[k] * hist[k + 1, j]
                trial[j] = acc
            ok = True
            for j in range(p):
                if not np.isfinite(trial[j]):
                    ok = False
            if ok:
                if skip >= 0:
                    trial[skip] = 0.0
                tobj = _objective_at(indptr, indices, data, y, trial, w, mu, skip, trial_resid)
                if tobj < obj:
                    beta[:] = trial
                    resid[:] = trial_resid
    return s, False


def objective(Z, y, b, w, mu) -> float:
    r = y - Z @ b
    return 0.5 * float(r @ r) + mu * float(np.sum(w * np.abs(b)))


def kkt_violation(Z, y, b, w, mu, skip: int = -1) -> float:
    """Largest violation of the lasso optimality conditions over all free coordinates."""
    g = Z.T @ (y - Z @ b)
    viol = np.where(b != 0, np.abs(g - mu * w * np.sign(b)), np.maximum(np.abs(g) - mu * w, 0.0))
    if skip >= 0:
        viol[skip] = 0.0
    return float(viol.max()) if viol.size else 0.0


def _as_csc(Z) -> sp.csc_matrix:
    Z = sp.csc_matrix(Z, dtype=float)
    Z.sort_indices()
    return Z


def solve_lasso(Z, y, w, mu: float, *, skip: int = -1, beta0: np.ndarray | None = None,
                opts: SolverOptions = SolverOptions(), colsq: np.ndarray | None = None,
                warn: bool = True) -> LassoFit:
    """Minimize the weighted lasso objective over all columns except ``skip``.

    After the sweep criterion is met the stationarity conditions are checked;
    if they fail the sweep tolerance is tightened and descent resumes.
    """
    if mu < 0:
        raise ValueError(f"mu must be nonnegative; got {mu}")
    Z = Z if sp.isspmatrix_csc(Z) and Z.has_sorted_indices else _as_csc(Z)
    y = np.ascontiguousarray(y, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    n, p = Z.shape
    if y.shape != (n,) or w.shape != (p,):
        raise ValueError(f"shape mismatch: Z {Z.shape}, y {y.shape}, w {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w[np.arange(p) != skip] <= 0):
        raise ValueError("penalty weights must be strictly positive and finite")
    if colsq is None:
        colsq = np.asarray(Z.multiply(Z).sum(axis=0)).ravel()
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    if skip >= 0:
        beta[skip] = 0.0
    resid = y - Z @ beta
    trace = np.empty(opts.max_sweeps)
    scale = 1.0 + float(np.max(np.abs(Z.T @ y))) if p else 1.0
    tol = opts.tol
    used, converged = 0, False
    while True:
        used, converged = _cd_sweeps(Z.indptr, Z.indices, Z.data, colsq, y, resid, beta, w, float(mu),
                                     skip, opts.max_sweeps, tol, trace, used)
        if not converged:
            break
        # refresh the residual to shed accumulated rounding before certifying
        resid = y - Z @ beta
        if kkt_violation(Z, y, beta, w, mu, skip) <= opts.kkt_tol * scale or tol < 1e-15:
            break
        tol *= 0.01
    if not converged and warn:
        warnings.warn(f"coordinate descent did not converge in {opts.max_sweeps} sweeps (mu={mu:.6g})",
                      RuntimeWarning, stacklevel=2)
    active = np.flatnonzero(beta)
    if skip >= 0:
        active = active[active != skip]
    pen = np.abs(beta) * w
    if skip >= 0:
        pen[skip] = 0.0
    return LassoFit(
        eta_hat=beta,
        residuals=resid,
        active_set=active,
        mu=float(mu),
        objective_value=0.5 * float(resid @ resid) + mu * float(pen.sum()),
        iterations=used,
        converged=converged,
        objective_trace=trace[:used].copy(),
        weights=w,
    )


def fit_weighted_lasso(sys: DesignSystem, w: np.ndarray | None, mu: float,
                       opts: SolverOptions = SolverOptions(), beta0: np.ndarray | None = None) -> LassoFit:
    if w is None:
        w = main_penalty_weights(sys)
    if len(w) != sys.p:
        raise ValueError(f"weights have length {len(w)}, design has {sys.p} columns")
    return solve_lasso(sys.Z, sys.Y, w, mu, beta0=beta0, opts=opts)


def mu_max(Z, y, w, skip: int = -1) -> float:
    """Smallest penalty at which the all-zero vector is optimal."""
    g = np.abs(Z.T @ y) / w
    if skip >= 0:
        g[skip] = 0.0
    return float(g.max())


def default_mu_grid(Z, y, w, skip: int = -1, n: int = 50, ratio: float = 1e-4) -> np.ndarray:
    top = mu_max(Z, y, w, skip)
    if top <= 0:
        return np.array([1.0])
    return np.geomspace(top, ratio * top, n)


def cluster_folds(n_clusters: int, folds: int, seed: int) -> np.ndarray:
    """Random assignment of clusters to folds of near-equal size."""
    if folds < 2:
        raise ValueError(f"need at least 2 folds; got {folds}")
    if folds > n_clusters:
        raise ValueError(f"{folds} folds requested but only {n_clusters} clusters available")
    perm = np.random.default_rng(seed).permutation(n_clusters)
    out = np.empty(n_clusters, dtype=np.int64)
    out[perm] = np.arange(n_clusters) % folds
    return out


@dataclass
class CVResult:
    mu: float
    grid: np.ndarray
    cv_error: np.ndarray
    fold_of_cluster: np.ndarray

    @property
    def index(self) -> int:
        return int(np.flatnonzero(self.grid == self.mu)[0])


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("mu grid must be a nonempty 1-d sequence")
    if np.any(grid < 0) or np.any(np.diff(grid) > 0):
        raise ValueError("mu grid must be nonnegative and sorted in descending order")
    return grid


def cv_path_errors(Z, y, w, grid, fold_of_row, n_folds: int, *, skip: int = -1,
                   opts: SolverOptions = SolverOptions()) -> np.ndarray:
    """Pooled held-out mean squared error for every grid value.

    Each fold is fit along the descending grid with warm starts.
    """
    Z = _as_csc(Z)
    y = np.asarray(y, dtype=float)
    sse = np.zeros(len(grid))
    Zr = Z.tocsr()
    for f in range(n_folds):
        test = fold_of_row == f
        Ztr = _as_csc(Zr[~test])
        Zte = Zr[test]
        ytr, yte = y[~test], y[test]
        colsq = np.asarray(Ztr.multiply(Ztr).sum(axis=0)).ravel()
        beta = None
        for g, mu in enumerate(grid):
            # path points that stall only blur the CV curve; no warning
            fit = solve_lasso(Ztr, ytr, w, mu, skip=skip, beta0=beta, opts=opts, colsq=colsq, warn=False)
            beta = fit.eta_hat
            e = yte - Zte @ beta
            sse[g] += float(e @ e)
    return sse / Z.shape[0]


def _pick(grid: np.ndarray, err: np.ndarray) -> float:
    # first index of the minimum == largest mu among ties on a descending grid
    return float(grid[int(np.argmin(err))])


def cv_select_mu(sys: DesignSystem, w: np.ndarray | None = None, grid=None, folds: int = 5, seed: int = 0,
                 opts: SolverOptions = SolverOptions()) -> CVResult:
    """Choose mu by K-fold CV with folds made of whole (i, j) clusters."""
    if w is None:
        w = main_penalty_weights(sys)
    fold_of_cluster = cluster_folds(sys.n_clusters, folds, seed)
    grid = default_mu_grid(sys.Z, sys.Y, w) if grid is None else _check_grid(grid)
    if grid.size == 1:
        return CVResult(float(grid[0]), grid, np.zeros(1), fold_of_cluster)
    err = cv_path_errors(sys.Z, sys.Y, w, grid, fold_of_cluster[sys.cluster_of_row], folds, opts=opts)
    return CVResult(_pick(grid, err), grid, err, fold_of_cluster)

"""Nodewise lasso regressions and rows of the approximate inverse Gram matrix."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateColumnError
from .lasso import (CVResult, SolverOptions, _check_grid, _pick, cluster_folds, cv_path_errors,
                    default_mu_grid, solve_lasso)
from .panel_core import DesignSystem

__all__ = [
    "PrecisionRow",
    "nodewise_weights",
    "fit_nodewise",
    "tau_sq",
    "build_theta_row",
    "select_mu_node",
    "precision_rows",
    "screen_columns",
]


@dataclass
class PrecisionRow:
    ell: int
    phi_hat: np.ndarray
    tau_sq: float
    theta_row: np.ndarray
    mu_node: float
    converged: bool = True
    cv: CVResult | None = field(default=None, repr=False)


def _full_weights(sys: DesignSystem) -> np.ndarray:
    # S / sqrt(NM): the same block loadings as the main regression
    return sys.S_diag / np.sqrt(sys.NM)


def nodewise_weights(sys: DesignSystem, ell: int) -> np.ndarray:
    """Penalty loadings of the regression of column ``ell`` on the rest (length p - 1)."""
    return np.delete(_full_weights(sys), ell)


def _check_ell(sys: DesignSystem, ell: int) -> None:
    if not 0 <= ell < sys.p:
        raise ValueError(f"target column {ell} outside 0..{sys.p - 1}")


def _embed(phi: np.ndarray, ell: int) -> np.ndarray:
    return np.insert(phi, ell, 0.0)


# Near-spanned targets (period dummies inside the unit-by-period block) need far
# more sweeps at small penalties; resume from the last iterate up to this multiple.
RESUME_FACTOR = 20


def _fit(sys, ell, mu_node, opts, beta0=None):
    y = sys.Z[:, [ell]].toarray().ravel()
    w = _full_weights(sys).copy()
    fit = solve_lasso(sys.Z, y, w, mu_node, skip=ell, beta0=beta0, opts=opts, warn=False)
    used = fit.iterations
    while not fit.converged and used < RESUME_FACTOR * opts.max_sweeps:
        fit = solve_lasso(sys.Z, y, w, mu_node, skip=ell, beta0=fit.eta_hat, opts=opts, warn=False)
        used += fit.iterations
    fit.iterations = used
    if not fit.converged:
        warnings.warn(f"nodewise fit for column {ell} did not converge in {used} sweeps (mu={mu_node:.6g})",
                      RuntimeWarning, stacklevel=3)
    return fit, y


def fit_nodewise(sys: DesignSystem, ell: int, mu_node: float, opts: SolverOptions = SolverOptions()) -> np.ndarray:
    """Lasso of column ``ell`` on all other columns; returns phi_hat of length p - 1."""
    _check_ell(sys, ell)
    fit, _ = _fit(sys, ell, mu_node, opts)
    return np.delete(fit.eta_hat, ell)


def tau_sq(sys: DesignSystem, ell: int, phi_hat: np.ndarray, mu_node: float) -> float:
    """Penalized residual scale ``||Z_l - Z_-l phi||^2/NM + mu_node ||w phi||_1 / NM``."""
    _check_ell(sys, ell)
    zl = sys.Z[:, [ell]].toarray().ravel()
    r = zl - sys.Z @ _embed(phi_hat, ell)
    val = (float(r @ r) + mu_node * float(np.abs(nodewise_weights(sys, ell) * phi_hat).sum())) / sys.NM
    if not val > 1e-12 * float(zl @ zl) / sys.NM:
        raise DegenerateColumnError(
            f"column {ell} ({sys.layout.name(ell)}) is numerically in the span of the other columns "
            f"(tau^2 = {val:.3g})")
    return val


def tau_sq_inner(sys: DesignSystem, ell: int, phi_hat: np.ndarray) -> float:
    """Inner-product form ``(Z_l - Z_-l phi)' Z_l / NM``; equals :func:`tau_sq` at a lasso solution."""
    zl = sys.Z[:, [ell]].toarray().ravel()
    r = zl - sys.Z @ _embed(phi_hat, ell)
    return float(r @ zl) / sys.NM


def build_theta_row(ell: int, phi_hat: np.ndarray, tau2: float, mu_node: float = float("nan")) -> PrecisionRow:
    if not tau2 > 0:
        raise DegenerateColumnError(f"column {ell}: tau^2 = {tau2:.3g} is not positive")
    theta = -_embed(phi_hat, ell) / tau2
    theta[ell] = 1.0 / tau2
    return PrecisionRow(ell=ell, phi_hat=np.asarray(phi_hat, dtype=float), tau_sq=float(tau2),
                        theta_row=theta, mu_node=mu_node)


def select_mu_node(sys: DesignSystem, ell: int, grid=None, folds: int = 5, seed: int = 0,
                   opts: SolverOptions = SolverOptions()) -> CVResult:
    """Cluster-fold CV for the nodewise penalty, same rules as the main regression."""
    _check_ell(sys, ell)
    fold_of_cluster = cluster_folds(sys.n_clusters, folds, seed)
    y = sys.Z[:, [ell]].toarray().ravel()
    w = _full_weights(sys)
    grid = default_mu_grid(sys.Z, y, w, skip=ell) if grid is None else _check_grid(grid)
    if grid.size == 1:
        return CVResult(float(grid[0]), grid, np.zeros(1), fold_of_cluster)
    err = cv_path_errors(sys.Z, y, w, grid, fold_of_cluster[sys.cluster_of_row], folds, skip=ell, opts=opts)
    return CVResult(_pick(grid, err), grid, err, fold_of_cluster)


def screen_columns(sys: DesignSystem, targets) -> None:
    """Reject targets that are all-zero or exact duplicates of another column."""
    Z = sys.Z
    norms = np.asarray(Z.multiply(Z).sum(axis=0)).ravel()
    for ell in targets:
        if norms[ell] == 0:
            raise DegenerateColumnError(f"column {ell} ({sys.layout.name(ell)}) is identically zero")
    gram_rows = (Z[:, targets].T @ Z).toarray()
    for r, ell in enumerate(targets):
        # squared distance to every other column, zero for an exact duplicate
        dist = norms + norms[ell] - 2.0 * gram_rows[r]
        dist[ell] = np.inf
        other = int(np.argmin(dist))
        if dist[other] <= 1e-12 * norms[ell]:
            raise DegenerateColumnError(
                f"column {ell} ({sys.layout.name(ell)}) duplicates column {other} "
                f"({sys.layout.name(other)})")


def precision_rows(sys: DesignSystem, targets, mu_node: float | None = None, grid=None, folds: int = 5,
                   seed: int = 0, shared_mu: bool = False,
                   opts: SolverOptions = SolverOptions()) -> list[PrecisionRow]:
    """Nodewise fits for the requested columns.

    ``mu_node`` fixes the penalty; otherwise it is chosen by CV per target, or
    once on the first target when ``shared_mu`` is set.
    """
    targets = [int(t) for t in targets]
    for ell in targets:
        _check_ell(sys, ell)
    screen_columns(sys, targets)
    rows = []
    shared = None
    for ell in targets:
        cv = None
        if mu_node is not None:
            mu = float(mu_node)
        elif shared_mu and shared is not None:
            mu = shared
        else:
            cv = select_mu_node(sys, ell, grid=grid, folds=folds, seed=seed, opts=opts)
            mu = cv.mu
            shared = mu
        fit, _ = _fit(sys, ell, mu, opts)
        phi = np.delete(fit.eta_hat, ell)
        row = build_theta_row(ell, phi, tau_sq(sys, ell, phi, mu), mu)
        row.converged = fit.converged
        row.cv = cv
        rows.append(row)
    return rows

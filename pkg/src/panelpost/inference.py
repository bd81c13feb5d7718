"""Debiasing, cluster-robust variance and confidence intervals for x/time coefficients."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np
import scipy.sparse as sp

from .exceptions import DegenerateVarianceError, NumericalError, PanelDataError
from .lasso import LassoFit, SolverOptions, cv_select_mu, fit_weighted_lasso, main_penalty_weights
from .nodewise import PrecisionRow, precision_rows
from .panel_core import DesignSystem, PanelDataset, build_design

__all__ = [
    "ClusterScores",
    "CoefficientRecord",
    "InferenceReport",
    "PostConfig",
    "debias",
    "debias_subgradient_form",
    "cluster_robust_omega",
    "variance_vll",
    "normal_quantile",
    "confidence_interval",
    "run_post_inference",
]


def debias(sys: DesignSystem, fit: LassoFit, rows: list[PrecisionRow]) -> np.ndarray:
    """One-step correction ``eta_l + Theta_l' Z'(Y - Z eta) / NM`` for each row."""
    if fit.residuals.shape != (sys.n_obs,) or fit.eta_hat.shape != (sys.p,):
        raise ValueError("fit does not match the design system")
    score = sys.Z.T @ fit.residuals
    out = np.empty(len(rows))
    for m, row in enumerate(rows):
        if row.theta_row.shape != (sys.p,):
            raise ValueError(f"precision row for column {row.ell} has length {row.theta_row.shape[0]}")
        out[m] = fit.eta_hat[row.ell] + float(row.theta_row @ score) / sys.NM
    return out


def debias_subgradient_form(sys: DesignSystem, fit: LassoFit, rows: list[PrecisionRow]) -> np.ndarray:
    """``eta_l + mu Theta_l' P'(eta) / NM`` with the subgradient read off the fit.

    On the support P' is w*sign(eta); off it the subgradient is the clipped
    normalized score, which is what the optimality conditions pin it to.
    """
    w = fit.weights
    score = sys.Z.T @ fit.residuals
    if fit.mu > 0:
        sub = np.where(fit.eta_hat != 0, np.sign(fit.eta_hat),
                       np.clip(score / (fit.mu * w), -1.0, 1.0))
    else:
        sub = np.zeros(sys.p)
    grad = fit.mu * w * sub
    return np.array([fit.eta_hat[r.ell] + float(r.theta_row @ grad) / sys.NM for r in rows])


@dataclass
class ClusterScores:
    """Per-(i, j) summed scores ``g_ij = sum_t Z_ijt e_ijt`` (rows of ``G``).

    ``Omega = G'G / NM`` is kept in this factored form.
    """

    G: sp.csr_matrix
    NM: int

    def quad(self, xi: np.ndarray) -> float:
        v = self.G @ np.asarray(xi, dtype=float)
        return float(v @ v) / self.NM

    def dense(self, max_p: int = 5000) -> np.ndarray:
        if self.G.shape[1] > max_p:
            raise MemoryError(f"p={self.G.shape[1]} exceeds the dense diagnostic limit max_p={max_p}")
        D = (self.G.T @ self.G).toarray() / self.NM
        return 0.5 * (D + D.T)


def cluster_robust_omega(sys: DesignSystem, residuals: np.ndarray) -> ClusterScores:
    residuals = np.asarray(residuals, dtype=float)
    if residuals.shape != (sys.n_obs,):
        raise ValueError(f"residuals have shape {residuals.shape}, expected ({sys.n_obs},)")
    n = sys.n_obs
    C = sp.csr_matrix((residuals, (sys.cluster_of_row, np.arange(n))), shape=(sys.n_clusters, n))
    G = sp.csr_matrix(C @ sys.Z)
    return ClusterScores(G, sys.NM)


def variance_vll(row: PrecisionRow | np.ndarray, omega: ClusterScores) -> float:
    theta = row.theta_row if isinstance(row, PrecisionRow) else np.asarray(row)
    v = omega.quad(theta)
    if not v > 0:
        raise DegenerateVarianceError(
            "variance estimate is not positive; residuals are zero or orthogonal to the scores")
    return v


def normal_quantile(q: float) -> float:
    return NormalDist().inv_cdf(q)


def confidence_interval(estimate: float, v_hat: float, NM: float, level: float = 0.95) -> tuple[float, float]:
    if not 0 < level < 1:
        raise ValueError(f"confidence level must lie in (0, 1); got {level}")
    if not v_hat > 0:
        raise DegenerateVarianceError(f"variance must be positive; got {v_hat}")
    half = normal_quantile(0.5 + level / 2) * np.sqrt(v_hat / NM)
    return estimate - half, estimate + half


@dataclass
class PostConfig:
    """Tuning of the four-step procedure.

    ``targets`` is ``"beta"`` (the k + T coefficients of x and the period
    dummies), ``"x"`` (the k regressors only), ``"all"`` or explicit column indices.
    """

    mu: float | None = None
    mu_grid: list[float] | None = None
    cv_folds: int = 5
    seed: int = 0
    targets: str | list[int] = "beta"
    mu_node: float | None = None
    mu_node_grid: list[float] | None = None
    shared_mu_node: bool = False
    level: float = 0.95
    solver: SolverOptions = field(default_factory=SolverOptions)

    def resolve_targets(self, sys: DesignSystem) -> list[int]:
        t = self.targets
        if t == "beta":
            return list(range(sys.layout.k0))
        if t == "x":
            return list(range(sys.layout.k))
        if t == "all":
            return list(range(sys.p))
        if isinstance(t, str):
            raise ValueError(f"unknown nodewise target set {t!r}")
        return [int(v) for v in t]


@dataclass
class CoefficientRecord:
    name: str
    column: int
    estimate_lasso: float
    estimate_debiased: float
    v_hat: float
    std_error: float
    ci_low: float
    ci_high: float
    level: float
    mu_node: float
    tau_sq: float

    @property
    def estimate(self) -> float:
        return self.estimate_debiased


@dataclass
class InferenceReport:
    records: list[CoefficientRecord]
    level: float
    mu: float
    active_size: int
    layout: dict
    converged: bool = True
    cv_error: list[float] | None = None

    def record(self, name: str) -> CoefficientRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "estimator": "post",
            "layout": self.layout,
            "level": self.level,
            "mu": self.mu,
            "active_size": self.active_size,
            "converged": self.converged,
            "coefficients": [
                {
                    "name": r.name,
                    "estimate": r.estimate_debiased,
                    "estimate_lasso": r.estimate_lasso,
                    "estimate_debiased": r.estimate_debiased,
                    "std_error": r.std_error,
                    "ci": [r.ci_low, r.ci_high],
                    "level": r.level,
                    "v_hat": r.v_hat,
                    "mu_node": r.mu_node,
                }
                for r in self.records
            ],
        }


@contextlib.contextmanager
def _step(label: str):
    try:
        yield
    except (NumericalError, PanelDataError, ValueError) as exc:
        raise type(exc)(f"[{label}] {exc}") from exc


def run_post_inference(data: PanelDataset | DesignSystem, config: PostConfig | None = None) -> InferenceReport:
    """Lasso, nodewise rows, debiasing and clustered variance for the target coefficients."""
    config = config or PostConfig()
    with _step("design"):
        sys = data if isinstance(data, DesignSystem) else build_design(data)
    w = main_penalty_weights(sys)
    opts = config.solver
    cv_error = None
    with _step("step 1: lasso"):
        if config.mu is not None:
            mu = float(config.mu)
        else:
            cv = cv_select_mu(sys, w, grid=config.mu_grid, folds=config.cv_folds, seed=config.seed, opts=opts)
            mu, cv_error = cv.mu, cv.cv_error.tolist()
        fit = fit_weighted_lasso(sys, w, mu, opts)
    with _step("step 2: nodewise"):
        targets = config.resolve_targets(sys)
        rows = precision_rows(sys, targets, mu_node=config.mu_node, grid=config.mu_node_grid,
                              folds=config.cv_folds, seed=config.seed, shared_mu=config.shared_mu_node, opts=opts)
    with _step("step 3: debias"):
        eta_tilde = debias(sys, fit, rows)
    with _step("step 4: variance"):
        omega = cluster_robust_omega(sys, fit.residuals)
        records = []
        for row, est in zip(rows, eta_tilde):
            v = variance_vll(row, omega)
            lo, hi = confidence_interval(est, v, sys.NM, config.level)
            records.append(CoefficientRecord(
                name=sys.layout.name(row.ell), column=row.ell, estimate_lasso=float(fit.eta_hat[row.ell]),
                estimate_debiased=float(est), v_hat=v, std_error=float(np.sqrt(v / sys.NM)),
                ci_low=float(lo), ci_high=float(hi), level=config.level, mu_node=row.mu_node, tau_sq=row.tau_sq))
    return InferenceReport(records=records, level=config.level, mu=mu, active_size=int(fit.active_set.size),
                           layout=sys.layout.as_dict(), converged=fit.converged and all(r.converged for r in rows),
                           cv_error=cv_error)

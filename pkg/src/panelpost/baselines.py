"""Pooled OLS and the three conventional fixed-effect estimators.

Fixed effects are partialled out by alternating projections (repeated group
demeaning) and the slope comes from the residualized regression. Standard
errors are clustered at the (i, j) pair.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import IdentificationError, NumericalError
from .inference import confidence_interval
from .panel_core import PanelDataset

__all__ = ["FixedEffectSpec", "BaselineFit", "group_ids", "demean", "fe_fit", "baseline_ci"]


class FixedEffectSpec(enum.Enum):
    NONE = "ols"
    FE1 = "fe1"  # alpha_i + gamma_j
    FE2 = "fe2"  # alpha_i + gamma_j + lambda_t
    FE3 = "fe3"  # alpha_it + gamma_jt

    @classmethod
    def parse(cls, value: "str | FixedEffectSpec") -> "FixedEffectSpec":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown estimator {value!r}; choose from {[s.value for s in cls]}") from None


@dataclass
class BaselineFit:
    spec: FixedEffectSpec
    beta: np.ndarray
    se: np.ndarray
    vcov: np.ndarray
    residuals: np.ndarray
    rss: float


def group_ids(data: PanelDataset, spec: FixedEffectSpec) -> list[np.ndarray]:
    """Integer codes of each absorbed dimension, one array per dimension, rows in (i, j, t) order."""
    ii, jj, tt, _, _ = data.long_arrays()
    T = data.T
    if spec is FixedEffectSpec.NONE:
        return []
    if spec is FixedEffectSpec.FE1:
        return [ii, jj]
    if spec is FixedEffectSpec.FE2:
        return [ii, jj, tt]
    return [ii * T + tt, jj * T + tt]


def demean(values: np.ndarray, groups: list[np.ndarray], tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Residualize the columns of ``values`` on the union of group dummies.

    Cycles through the groupings subtracting group means until the largest
    update falls below ``tol`` times the scale of the input.
    """
    out = np.array(values, dtype=float, copy=True)
    squeeze = out.ndim == 1
    if squeeze:
        out = out[:, None]
    if not groups:
        return out[:, 0] if squeeze else out
    counts = [np.bincount(g) for g in groups]
    scale = max(1.0, float(np.max(np.abs(out)))) if out.size else 1.0
    for _ in range(max_iter):
        largest = 0.0
        for g, c in zip(groups, counts):
            means = np.stack([np.bincount(g, weights=out[:, m], minlength=c.size) for m in range(out.shape[1])],
                             axis=1) / c[:, None]
            out -= means[g]
            largest = max(largest, float(np.max(np.abs(means))))
        if largest < tol * scale or len(groups) == 1:
            break
    else:
        raise NumericalError(f"alternating projections did not converge in {max_iter} iterations")
    return out[:, 0] if squeeze else out


def fe_fit(data: PanelDataset, spec: FixedEffectSpec | str, tol: float = 1e-10) -> BaselineFit:
    """Slope on x with the chosen fixed effects absorbed.

    ``NONE`` is pooled least squares of y on x with no constant, the model
    with every fixed effect set to zero.
    """
    spec = FixedEffectSpec.parse(spec)
    ii, jj, _, y, x = data.long_arrays()
    groups = group_ids(data, spec)
    both = demean(np.column_stack([y, x]), groups, tol=tol)
    yt, xt = both[:, 0], both[:, 1:]

    U, s, Vt = np.linalg.svd(xt, full_matrices=False)
    ref = np.linalg.norm(x, axis=0).max()
    if s.size == 0 or s.min() <= 1e-8 * max(ref, 1e-300):
        raise IdentificationError(
            f"regressors are collinear with the {spec.value} fixed effects and are not identified")
    beta = Vt.T @ ((U.T @ yt) / s)
    resid = yt - xt @ beta
    bread = Vt.T @ np.diag(1.0 / s**2) @ Vt

    cluster = ii * data.M + jj
    scores = np.zeros((data.N * data.M, xt.shape[1]))
    np.add.at(scores, cluster, xt * resid[:, None])
    meat = scores.T @ scores
    vcov = bread @ meat @ bread
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    return BaselineFit(spec=spec, beta=beta, se=se, vcov=vcov, residuals=resid, rss=float(resid @ resid))


def baseline_ci(beta_hat: float, se: float, level: float = 0.95) -> tuple[float, float]:
    """Normal interval ``beta_hat +/- z se``; same arithmetic as the debiased intervals."""
    return confidence_interval(beta_hat, se**2, 1.0, level)

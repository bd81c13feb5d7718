"""Data-generating process for three-way fixed-effect panels and a Monte Carlo driver."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import baseline_ci, fe_fit
from .exceptions import NumericalError, SimulationError
from .inference import PostConfig, run_post_inference
from .panel_core import PanelDataset

__all__ = [
    "ESTIMATORS",
    "STATISTICS",
    "SimulationConfig",
    "SimulatedPanel",
    "EstimatorSummary",
    "SimulationSummary",
    "generate_dgp",
    "run_replication",
    "run_monte_carlo",
    "summarize",
    "emit_table",
    "parse_table_csv",
]

log = logging.getLogger(__name__)

ESTIMATORS = ("ols", "fe1", "fe2", "fe3", "post")
LABELS = {"ols": "OLS", "fe1": "FE-I", "fe2": "FE-II", "fe3": "FE-III", "post": "POST"}
STATISTICS = ("average", "bias", "sd", "rmse", "coverage")
STAT_LABELS = {"average": "Average", "bias": "Bias", "sd": "Standard Deviation",
               "rmse": "Root Mean Square Error", "coverage": "95% Coverage"}

# stream tags for per-replication randomness
_REP_STREAM = 0
_FROZEN_STREAM = 1
_FOLD_STREAM = 2


@dataclass(frozen=True)
class SimulationConfig:
    true_model: int = 1
    N: int = 10
    M: int | None = None
    T: int = 5
    reps: int = 1000
    seed: int = 0
    estimators: tuple[str, ...] = ESTIMATORS
    beta: float = 1.0
    m_alpha: float = 0.0
    s_alpha: float = 1.0
    m_gamma: float = 0.0
    s_gamma: float = 1.0
    shock: float = 2.0
    shock_period: int | None = None
    m_x: float = 0.0
    s_x: float = 2.0
    rho: float = 0.5
    m_eps: float = 0.0
    s_eps: float = 10.0
    freeze_effects: bool = False
    level: float = 0.95
    max_failure_rate: float = 0.01
    # nodewise targets for the POST estimator; only the x slope is scored
    post_targets: str = "x"
    cv_folds: int = 5

    def __post_init__(self):
        if self.true_model not in (1, 2, 3):
            raise ValueError(f"true_model must be 1, 2 or 3; got {self.true_model}")
        if self.reps < 1:
            raise ValueError(f"reps must be at least 1; got {self.reps}")
        if self.N < 3:
            raise ValueError(f"N must be at least 3; got {self.N}")
        if self.M is not None and self.M < 2:
            raise ValueError(f"M must be at least 2; got {self.M}")
        if self.T < 1:
            raise ValueError(f"T must be at least 1; got {self.T}")
        if not 1 <= self.period <= self.T:
            raise ValueError(f"shock period {self.period} outside 1..{self.T}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ValueError(f"unknown estimators {bad}; choose from {list(ESTIMATORS)}")

    @property
    def n_dest(self) -> int:
        return self.M if self.M is not None else self.N - 1

    @property
    def period(self) -> int:
        return self.shock_period if self.shock_period is not None else math.ceil(self.T / 2)

    def ordered_estimators(self) -> tuple[str, ...]:
        return tuple(e for e in ESTIMATORS if e in self.estimators)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["M"] = self.n_dest
        d["shock_period"] = self.period
        d["estimators"] = list(self.ordered_estimators())
        return d


@dataclass
class SimulatedPanel:
    data: PanelDataset
    beta: float
    effects: dict = field(repr=False)


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed % 2**64, *stream])))


def _effect_sd(s: float, n: int) -> np.ndarray:
    u = np.arange(1, n + 1, dtype=float)
    return s / np.sqrt(np.sqrt(u) * np.log(u + 1) ** 3)


def _draw_effects(cfg: SimulationConfig, rng: np.random.Generator) -> dict:
    N, M, T = cfg.N, cfg.n_dest, cfg.T
    sa, sg = _effect_sd(cfg.s_alpha, N), _effect_sd(cfg.s_gamma, M)
    return {
        "alpha": cfg.m_alpha + sa * rng.standard_normal(N),
        "gamma": cfg.m_gamma + sg * rng.standard_normal(M),
        "alpha_t": cfg.m_alpha + sa[:, None] * rng.standard_normal((N, T)),
        "gamma_t": cfg.m_gamma + sg[:, None] * rng.standard_normal((M, T)),
    }


def generate_dgp(config: SimulationConfig, rep_index: int) -> SimulatedPanel:
    """One panel from the configured true model; deterministic in (seed, rep_index)."""
    N, M, T = config.N, config.n_dest, config.T
    rng = _rng(config.seed, _REP_STREAM, rep_index)
    drawn = _draw_effects(config, rng)
    if config.freeze_effects:
        drawn = _draw_effects(config, _rng(config.seed, _FROZEN_STREAM))
    lam = np.zeros(T)
    lam[config.period - 1] = config.shock

    if config.true_model == 1:
        fe = drawn["alpha"][:, None, None] + drawn["gamma"][None, :, None] + np.zeros((N, M, T))
    elif config.true_model == 2:
        fe = drawn["alpha"][:, None, None] + drawn["gamma"][None, :, None] + lam[None, None, :]
    else:
        fe = drawn["alpha_t"][:, None, :] + drawn["gamma_t"][None, :, :]
    F = fe / np.sqrt(np.mean(fe**2))

    x_tilde = rng.standard_normal((N, M, T))
    eps = config.m_eps + config.s_eps * rng.standard_normal((N, M, T))
    x = config.m_x + config.s_x * ((1 - config.rho) * x_tilde + config.rho * F)
    y = config.beta * x + fe + eps
    effects = dict(drawn, **{"lambda": lam if config.true_model == 2 else np.zeros(T),
                             "F": F, "eps": eps, "x_tilde": x_tilde})
    return SimulatedPanel(PanelDataset(y, x), config.beta, effects)


def _post_config(config: SimulationConfig, rep_index: int) -> PostConfig:
    fold_seed = int(_rng(config.seed, _FOLD_STREAM, rep_index).integers(2**63))
    return PostConfig(seed=fold_seed, targets=config.post_targets, level=config.level, cv_folds=config.cv_folds)


def run_replication(config: SimulationConfig, rep_index: int) -> dict[str, tuple[float, bool]]:
    """Estimates and CI coverage indicators for every requested estimator."""
    sim = generate_dgp(config, rep_index)
    out = {}
    for name in config.ordered_estimators():
        if name == "post":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                report = run_post_inference(sim.data, _post_config(config, rep_index))
            if not report.converged:
                raise NumericalError("solver did not converge")
            rec = report.records[0]
            est, lo, hi = rec.estimate_debiased, rec.ci_low, rec.ci_high
        else:
            fit = fe_fit(sim.data, name)
            est = float(fit.beta[0])
            lo, hi = baseline_ci(est, float(fit.se[0]), config.level)
        out[name] = (float(est), bool(lo <= sim.beta <= hi))
    return out


def _safe_replication(args):
    config, rep = args
    try:
        return rep, run_replication(config, rep), None
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


@dataclass
class EstimatorSummary:
    average: float
    bias: float
    sd: float
    rmse: float
    coverage: float

    def get(self, stat: str) -> float:
        return getattr(self, stat)


@dataclass
class SimulationSummary:
    estimators: dict[str, EstimatorSummary]
    replications: int
    failures: int
    config: dict

    def to_dict(self) -> dict:
        return {
            "replications": self.replications,
            "failures": self.failures,
            "config": self.config,
            "estimators": {k: asdict(v) for k, v in self.estimators.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationSummary":
        return cls({k: EstimatorSummary(**v) for k, v in d["estimators"].items()},
                   d["replications"], d["failures"], d["config"])


def summarize(estimates: np.ndarray, covered: np.ndarray, truth: float) -> EstimatorSummary:
    """Sample moments with divisor n, so that rmse^2 = bias^2 + sd^2."""
    estimates = np.asarray(estimates, dtype=float)
    avg = float(np.mean(estimates))
    bias = avg - truth
    sd = float(np.sqrt(np.mean((estimates - avg) ** 2)))
    rmse = float(np.sqrt(bias**2 + sd**2))
    return EstimatorSummary(avg, bias, sd, rmse, float(np.mean(covered)))


def default_workers() -> int:
    return max(1, int(os.environ.get("PANELPOST_WORKERS", "1")))


def run_monte_carlo(config: SimulationConfig, workers: int | None = None, progress=None) -> SimulationSummary:
    """Replicate generate/estimate/cover ``config.reps`` times and aggregate.

    Failed replications are dropped and counted; exceeding
    ``config.max_failure_rate`` raises :class:`SimulationError`.
    """
    workers = default_workers() if workers is None else workers
    jobs = [(config, r) for r in range(config.reps)]
    results = [None] * config.reps
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rep, res, err in pool.map(_safe_replication, jobs, chunksize=max(1, config.reps // (8 * workers))):
                results[rep] = (res, err)
                if progress:
                    progress(rep)
    else:
        for job in jobs:
            rep, res, err = _safe_replication(job)
            results[rep] = (res, err)
            if progress:
                progress(rep)
    failures = [(r, err) for r, (res, err) in enumerate(results) if res is None]
    for r, err in failures:
        log.warning("replication %d failed: %s", r, err)
    if len(failures) > config.max_failure_rate * config.reps:
        raise SimulationError(f"{len(failures)} of {config.reps} replications failed "
                              f"(first: replication {failures[0][0]}: {failures[0][1]})")
    good = [res for res, _ in results if res is not None]
    summary = {}
    for name in config.ordered_estimators():
        est = np.array([g[name][0] for g in good])
        cov = np.array([g[name][1] for g in good])
        summary[name] = summarize(est, cov, config.beta)
    return SimulationSummary(summary, len(good), len(failures), config.as_dict())


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def emit_table(summary: SimulationSummary) -> tuple[str, str]:
    """Aligned text table and CSV with statistics as rows and estimators as columns."""
    names = [e for e in ESTIMATORS if e in summary.estimators]
    header = [""] + [LABELS[e] for e in names]
    rows = [[STAT_LABELS[s]] + [_fmt(summary.estimators[e].get(s)) for e in names] for s in STATISTICS]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["statistic"] + header[1:])
    for s, row in zip(STATISTICS, rows):
        w.writerow([s] + row[1:])

    widths = [max(len(r[c]) for r in [header] + rows) for c in range(len(header))]
    lines = []
    cfg = summary.config
    model = {1: "I", 2: "II", 3: "III"}.get(cfg.get("true_model"), "?")
    lines.append(f"True Model = ({model})  N={cfg.get('N')} M={cfg.get('M')} T={cfg.get('T')}  reps={summary.replications}"
                 f" failures={summary.failures}")
    for r in [header] + rows:
        lines.append("  ".join(cell.ljust(widths[0]) if c == 0 else cell.rjust(widths[c])
                               for c, cell in enumerate(r)))
    return "\n".join(lines) + "\n", buf.getvalue()


def parse_table_csv(text: str) -> dict[str, dict[str, float]]:
    """Inverse of the CSV half of :func:`emit_table`: ``{estimator: {statistic: value}}``."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    inv = {v: k for k, v in LABELS.items()}
    names = [inv[h] for h in header[1:]]
    out = {n: {} for n in names}
    for row in reader:
        for n, cell in zip(names, row[1:]):
            out[n][row[0]] = float(cell)
    return out

"""Debiased-lasso inference for three-dimensional panels with unknown fixed-effect structure."""

__version__ = "0.1.0"

from .baselines import FixedEffectSpec, fe_fit
from .exceptions import (DegenerateColumnError, DegenerateVarianceError, IdentificationError, NumericalError,
                         PanelDataError, SimulationError)
from .inference import InferenceReport, PostConfig, run_post_inference
from .lasso import LassoFit, SolverOptions, cv_select_mu, fit_weighted_lasso
from .nodewise import PrecisionRow, precision_rows
from .panel_core import DesignLayout, DesignSystem, Effect, PanelDataset, build_design, read_panel_csv
from .simulation import SimulationConfig, SimulationSummary, generate_dgp, run_monte_carlo

__all__ = [
    "DegenerateColumnError", "DegenerateVarianceError", "DesignLayout", "DesignSystem", "Effect",
    "FixedEffectSpec", "IdentificationError", "InferenceReport", "LassoFit", "NumericalError",
    "PanelDataError", "PanelDataset", "PostConfig", "PrecisionRow", "SimulationConfig", "SimulationError",
    "SimulationSummary", "SolverOptions", "build_design", "cv_select_mu", "fe_fit", "fit_weighted_lasso",
    "generate_dgp", "precision_rows", "read_panel_csv", "run_monte_carlo", "run_post_inference",
]

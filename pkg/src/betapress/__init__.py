"""Linear and nonlinear beta regression with varying precision, PRESS-based
prediction coefficients and a Monte Carlo harness."""

from .data import Dataset, load_csv, write_csv
from .diagnostics import (
    DiagnosticsReport,
    combined_residual,
    diagnose,
    lambda_intensity,
    leverage,
    one_step_deleted_beta,
    p2_family,
    press,
    press_combined,
    press_plot_data,
    r2_family,
    sst_deleted,
    weighted_residual_1,
)
from .errors import BetaPressError
from .estimation import FitOptions, FitResult, ModelSpec, fit, fit_null, log_likelihood, score
from .formula import PredictorSpec, parse_formula
from .io import ModelConfig, load_config
from .links import LinkKind, link_deriv, link_inverse, link_value
from .simulation import MonteCarloSummary, ScenarioSpec, build_scenario, generate_dataset, run_monte_carlo
from .special import BetaParams, beta_log_density, beta_sample, digamma, log_gamma, random_stream, trigamma

__version__ = "0.1.0"

__all__ = [
    "BetaParams",
    "BetaPressError",
    "Dataset",
    "DiagnosticsReport",
    "FitOptions",
    "FitResult",
    "LinkKind",
    "ModelConfig",
    "ModelSpec",
    "MonteCarloSummary",
    "PredictorSpec",
    "ScenarioSpec",
    "beta_log_density",
    "beta_sample",
    "build_scenario",
    "combined_residual",
    "diagnose",
    "digamma",
    "fit",
    "fit_null",
    "generate_dataset",
    "lambda_intensity",
    "leverage",
    "link_deriv",
    "link_inverse",
    "link_value",
    "load_config",
    "load_csv",
    "log_gamma",
    "log_likelihood",
    "one_step_deleted_beta",
    "p2_family",
    "parse_formula",
    "press",
    "press_combined",
    "press_plot_data",
    "r2_family",
    "random_stream",
    "run_monte_carlo",
    "score",
    "sst_deleted",
    "trigamma",
    "weighted_residual_1",
    "write_csv",
]

"""Covariate-standardized comparisons of vaccine immunogenicity across trials."""

from .contrasts import ContrastResult, contrast_difference, contrast_geomean_ratio, wald_test
from .data import (
    EstimandSpec,
    ObservedUnit,
    Schema,
    StackedDataset,
    TrialInfo,
    ValidationReport,
    load_stacked_csv,
    validate,
    write_stacked_csv,
)
from .identification import DiscreteDGP, identify_exact
from .nuisance import EstimationError, FittedNuisances, fit_nuisances
from .sim import ScenarioSpec, analytic_truth, generate, load_preset, run_monte_carlo
from .tmle import EstimateResult, estimate_unadjusted, run_tmle, run_tmle_full_data

__version__ = "0.1.0"

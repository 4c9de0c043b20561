"""Causal effect estimation with non-Gaussian treatments and Gaussian covariates.

The estimator fits E(Z | A) nonparametrically and regresses Y on
(A, E(Z | A)); the coefficients on A are the treatment effects.
"""
from .core import (
    Dataset,
    ExtraConfounder,
    NoiseSpec,
    ScenarioSpec,
    StandardizedDataset,
    destandardize_effect,
    read_csv,
    standardize,
    write_csv,
)
from .dgp import load_scenario, make_rng, population_moments, sample
from .diagnostics import DiagnosticsReport, anderson_darling, screen
from .estimators import EstimateReport, PipelineConfig, eunc_estimate, eunc_pipeline, tsls_estimate
from .inference import BenchmarkReport, BootstrapCI, bootstrap_ci, rate_check, run_benchmark, run_sensitivity

__version__ = "0.1.0"

__all__ = [
    "BenchmarkReport",
    "BootstrapCI",
    "Dataset",
    "DiagnosticsReport",
    "EstimateReport",
    "ExtraConfounder",
    "NoiseSpec",
    "PipelineConfig",
    "ScenarioSpec",
    "StandardizedDataset",
    "anderson_darling",
    "bootstrap_ci",
    "destandardize_effect",
    "eunc_estimate",
    "eunc_pipeline",
    "load_scenario",
    "make_rng",
    "population_moments",
    "rate_check",
    "read_csv",
    "run_benchmark",
    "run_sensitivity",
    "sample",
    "screen",
    "standardize",
    "tsls_estimate",
    "write_csv",
]

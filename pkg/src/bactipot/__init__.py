"""Branching-process dose-response modeling and MIC estimation.

Models antibiotic-treated bacterial growth as a two-type branching process
(live and dead cells), synthesizes or ingests qPCR cycle-threshold data,
estimates the dose-response parameters and the minimal inhibitory
concentration, and validates the estimators against their exact asymptotic
covariances.
"""

from .branching import (
    MAX_COUNT,
    GrowthParams,
    OffspringDistribution,
    PopulationState,
    dist_from_mean,
    extinction_probability,
    mean_from_concentration,
    mean_total,
    mean_total_bounds,
    mean_total_derivative,
    mean_total_from_mean,
    simulate,
    simulate_batch,
    step,
)
from .errors import (
    BactipotError,
    CountOverflowError,
    DatasetFormatError,
    InsufficientDataError,
    InvalidParameterError,
    SingularDesignError,
)
from .estimators import (
    DEFAULT_M_BAND,
    AsymptoticCovariance,
    FitResult,
    MeanEstimate,
    RegressionInputs,
    asymptotic_covariance,
    estimate_calibration,
    estimate_generations,
    estimate_log2_mean_total,
    estimate_noise_sd,
    estimate_offspring_mean,
    fit_dose_response,
    invert_mean_total,
    k_factor,
    mic,
    round_generations,
)
from .harness import (
    CtResidual,
    DesignEvaluation,
    McStudyConfig,
    McStudyReport,
    PipelineConfig,
    PipelineFit,
    emit_curve,
    evaluate_designs,
    fit_dataset,
    log_spaced_grid,
    run_mc_study,
)
from .measurement import (
    CSV_COLUMNS,
    CtDataset,
    CtObservation,
    MeasurementConfig,
    read_dataset,
    simulate_experiment,
    synthesize_ct,
    write_dataset,
)
from .seeding import spawn_rng

__version__ = "0.1.0"

__all__ = [
    "AsymptoticCovariance",
    "BactipotError",
    "CSV_COLUMNS",
    "CountOverflowError",
    "CtDataset",
    "CtObservation",
    "CtResidual",
    "DatasetFormatError",
    "DEFAULT_M_BAND",
    "DesignEvaluation",
    "FitResult",
    "GrowthParams",
    "InsufficientDataError",
    "InvalidParameterError",
    "MAX_COUNT",
    "McStudyConfig",
    "McStudyReport",
    "MeanEstimate",
    "MeasurementConfig",
    "OffspringDistribution",
    "PipelineConfig",
    "PipelineFit",
    "PopulationState",
    "RegressionInputs",
    "SingularDesignError",
    "asymptotic_covariance",
    "dist_from_mean",
    "emit_curve",
    "estimate_calibration",
    "estimate_generations",
    "estimate_log2_mean_total",
    "estimate_noise_sd",
    "estimate_offspring_mean",
    "evaluate_designs",
    "extinction_probability",
    "fit_dataset",
    "fit_dose_response",
    "invert_mean_total",
    "k_factor",
    "log_spaced_grid",
    "mean_from_concentration",
    "mean_total",
    "mean_total_bounds",
    "mean_total_derivative",
    "mean_total_from_mean",
    "mic",
    "read_dataset",
    "round_generations",
    "run_mc_study",
    "simulate",
    "simulate_batch",
    "simulate_experiment",
    "spawn_rng",
    "step",
    "synthesize_ct",
    "write_dataset",
]

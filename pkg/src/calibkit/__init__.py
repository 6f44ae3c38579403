"""Fit-on-the-test calibration evaluation and post-hoc calibration."""

from .binning import (
    Binning,
    ReliabilityDiagram,
    TiltedMap,
    build_binning,
    cv_select_bins,
    debias_ece,
    ece_binned,
    reliability_diagram,
    sweep_select,
    tilted_roof_map,
)
from .core import BinaryDataset, DomainError, FormatError, GroundTruthMap, reduce_multiclass
from .harness import (
    BenchmarkConfig,
    EvaluatorSpec,
    estimate_ground_truth,
    evaluate_evaluator,
    fit_on_test_ece,
    run_benchmark,
    spearman_rank,
)
from .piecewise import PLEnsemble, PLModel, TrainConfig, pl_cv_fit, train_pl
from .scalers import fit_beta, fit_isotonic, fit_platt, fit_temperature, pava
from .synthgen import generate_dataset, solve_mixing

__all__ = [
    "BenchmarkConfig", "BinaryDataset", "Binning", "DomainError", "EvaluatorSpec",
    "FormatError", "GroundTruthMap", "PLEnsemble", "PLModel", "ReliabilityDiagram",
    "TiltedMap", "TrainConfig", "build_binning", "cv_select_bins", "debias_ece",
    "ece_binned", "estimate_ground_truth", "evaluate_evaluator", "fit_beta",
    "fit_isotonic", "fit_on_test_ece", "fit_platt", "fit_temperature",
    "generate_dataset", "pava", "pl_cv_fit", "reduce_multiclass", "reliability_diagram",
    "run_benchmark", "solve_mixing", "spearman_rank", "sweep_select", "tilted_roof_map",
    "train_pl",
]

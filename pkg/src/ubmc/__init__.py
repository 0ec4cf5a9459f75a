"""Unbiased Monte Carlo estimation by randomized truncation.

The package builds unbiased estimators of expectations under intractable
or infinite-dimensional target distributions from coupled-chain level
differences, together with the efficiency analysis used to tune them and
a reproducible experiment harness.
"""

from .estimator import (
    BatchResult,
    EstimatorError,
    NonFiniteDeltaError,
    SurvivalDistribution,
    UnbiasedDraw,
    estimate_batch,
    estimate_once,
    expected_work,
    sample_truncation,
    second_moment_formula,
)
from .couplings import (
    ContractionFit,
    CoupledKernel,
    DistanceLike,
    LevelSchedule,
    MarkovKernel,
    coupled_contraction_delta,
    contraction_delta_generator,
    estimate_contraction,
    minorized_step,
)
from .rng import Stream

__all__ = [
    "BatchResult",
    "ContractionFit",
    "CoupledKernel",
    "DistanceLike",
    "EstimatorError",
    "LevelSchedule",
    "MarkovKernel",
    "NonFiniteDeltaError",
    "Stream",
    "SurvivalDistribution",
    "UnbiasedDraw",
    "coupled_contraction_delta",
    "contraction_delta_generator",
    "estimate_batch",
    "estimate_once",
    "estimate_contraction",
    "expected_work",
    "minorized_step",
    "sample_truncation",
    "second_moment_formula",
]

__version__ = "0.1.0"

"""Estimate test error from model disagreement and grade ensemble calibration.

The package computes pairwise disagreement of model predictions on unlabeled
test data as an estimator of test error, measures how well the implied
ensemble is calibrated (class-wise, class-aggregated, top-class), and
verifies the identities connecting the two on exact finite populations and
simulated stochastic learners.
"""

from .calibration import (
    CalibrationCurve,
    ConfidenceBin,
    cace_binned,
    cace_exact,
    cace_refined,
    class_aggregated_curve,
    class_wise_curve,
    ece_binned,
    max_classwise_deviation,
    top_class_curve,
)
from .core import (
    LabelVector,
    Population,
    PredictionMatrix,
    ProbabilityProfile,
    RandomSource,
    TOL_NORM,
    align_labels,
    ensemble_from_predictions,
    validate_profile,
)
from .errors import (
    AlignmentError,
    ClassRangeError,
    ConstraintError,
    ConstructionError,
    ConvergenceWarning,
    DegenerateError,
    DuplicateIdError,
    GdekitError,
    IoError,
    KappaRangeError,
    NormalizationError,
    ParseError,
    RangeError,
    SchemaError,
    SizeError,
)
from .metrics import (
    GdeReport,
    PairwiseDisagreement,
    ScatterStats,
    bootstrap_std,
    bootstrap_std_of_mean,
    compute_gde_report,
    disagreement,
    expected_disagreement,
    expected_test_error,
    gde_gap,
    pairwise_disagreement,
    per_model_test_errors,
    scatter_stats,
    test_error,
)
from .theory import (
    DeviationBoundCheck,
    GdeCheck,
    HypothesisDistribution,
    KappaCertificate,
    check_deviation_bound,
    check_gde,
    easy_hard_population,
    gen_aggregated_not_classwise,
    gen_classwise_calibrated,
    gen_random_hypothesis_distribution,
    gen_random_population,
    sampled_gde_gap,
    uncalibrated_gde_population,
    variance_certificate,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

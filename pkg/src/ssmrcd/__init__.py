"""Spatially smoothed robust covariance estimation and local outlier detection.

The front-door workflow is three calls: build a ``Dataset`` and a
``NeighborhoodStructure`` (``grid_neighborhoods``), fit the coupled
per-neighborhood covariances with ``ssmrcd_fit``, and score observations with
``detect_outliers``. The ``simulate`` helpers generate the synthetic random
fields used for calibration studies, and the ``ssmrcd`` console script wraps
everything behind JSON configs.
"""

from ._backend import backend_name
from .detect import OutlierReport, detect_outliers, next_distance
from .estimator import (
    SsMrcdConfig,
    SsMrcdModel,
    mahalanobis_pair,
    ssmrcd_exhaustive,
    ssmrcd_fit,
)
from .mcd import McdResult, mcd_estimate
from .numerics import (
    NotPositiveDefiniteError,
    adjusted_upper_fence,
    consistency_factor,
    medcouple,
)
from .simulate import (
    Metrics,
    SimTruth,
    confusion_metrics,
    contaminate_extreme,
    contaminate_random,
    convergence_trace,
    generate_field,
    matern_correlation,
    run_benchmark,
    run_detection_experiment,
    setup1_generate,
    setup2_generate,
    tune_lambda,
)
from .spatial import (
    Dataset,
    NeighborhoodStructure,
    adjacency_weights,
    grid_neighborhoods,
    inverse_distance_weights,
    spatial_knn,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "backend_name",
    # spatial building blocks
    "Dataset",
    "NeighborhoodStructure",
    "grid_neighborhoods",
    "inverse_distance_weights",
    "adjacency_weights",
    "spatial_knn",
    # estimation
    "SsMrcdConfig",
    "SsMrcdModel",
    "ssmrcd_fit",
    "ssmrcd_exhaustive",
    "mahalanobis_pair",
    "McdResult",
    "mcd_estimate",
    # detection
    "OutlierReport",
    "detect_outliers",
    "next_distance",
    # numerics
    "NotPositiveDefiniteError",
    "consistency_factor",
    "medcouple",
    "adjusted_upper_fence",
    # simulation harness
    "SimTruth",
    "Metrics",
    "generate_field",
    "setup1_generate",
    "setup2_generate",
    "matern_correlation",
    "contaminate_random",
    "contaminate_extreme",
    "confusion_metrics",
    "run_detection_experiment",
    "tune_lambda",
    "run_benchmark",
    "convergence_trace",
]

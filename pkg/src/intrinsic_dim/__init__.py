"""Intrinsic dimension estimators, benchmark manifolds and an experiment harness."""
from .datasets import DatasetSpec, add_gaussian_noise, add_outliers, generate
from .geometry import PointCloud, knn_query, pairwise_distances
from .registry import EstimatorConfig, list_estimators, run_estimator
from .report import EstimateReport

__all__ = [
    "DatasetSpec", "EstimateReport", "EstimatorConfig", "PointCloud", "add_gaussian_noise", "add_outliers",
    "generate", "knn_query", "list_estimators", "pairwise_distances", "run_estimator",
]
__version__ = "0.1.0"

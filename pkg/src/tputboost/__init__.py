"""Boosted point and Normal-distribution regressors for downlink throughput,
with exact TreeSHAP importance reports."""

__version__ = "0.1.0"

from .data import Dataset, TargetTransform, ingest_csv, temporal_split  # noqa: E402
from .dist_booster import NormalBoostRegressor  # noqa: E402
from .explain import ensemble_shap, importance_report, tree_shap  # noqa: E402
from .point_booster import PointBoostRegressor  # noqa: E402
from .prob import NormalParams  # noqa: E402
from .tree import RegressionTree  # noqa: E402

__all__ = [
    "Dataset",
    "NormalBoostRegressor",
    "NormalParams",
    "PointBoostRegressor",
    "RegressionTree",
    "TargetTransform",
    "ensemble_shap",
    "importance_report",
    "ingest_csv",
    "temporal_split",
    "tree_shap",
]

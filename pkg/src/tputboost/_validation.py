import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DataError


def check_features(X, n_features=None, allow_empty=False):
    """Float64, C-contiguous 2-D array; NaN marks a missing cell, inf is rejected."""
    X = check_array(
        X,
        dtype=np.float64,
        order="C",
        ensure_all_finite="allow-nan",
        ensure_min_samples=0 if allow_empty else 1,
    )
    if n_features is not None and X.shape[1] != n_features:
        raise DataError(f"X has {X.shape[1]} features, model was fitted with {n_features}")
    return X


def check_target(y, n_rows):
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64).ravel())
    if y.shape[0] != n_rows:
        raise DataError(f"y has {y.shape[0]} rows, X has {n_rows}")
    if not np.all(np.isfinite(y)):
        raise DataError("targets must be finite")
    return y


def features_of(data):
    """Accept a Dataset or anything array-like."""
    return data.features if hasattr(data, "feature_names") and hasattr(data, "throughput") else data

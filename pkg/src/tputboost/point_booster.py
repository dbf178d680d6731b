"""Point-estimate gradient boosting on squared error with validation early stopping."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_target, features_of
from .data import Dataset, TargetTransform
from .exceptions import ConfigError, DataError
from .tree import PackedTrees, fit_tree, predict_packed, predict_tree, presort

logger = logging.getLogger(__name__)

# validation loss must drop by more than this to count as an improvement
IMPROVEMENT_TOL = 1e-12


class EarlyStopping:
    """Tracks the best validation score; iteration 0 is the initial model."""

    def __init__(self, initial: float, patience: int):
        self.best_score = initial
        self.best_iteration = 0
        self.patience = patience

    def update(self, iteration: int, score: float) -> bool:
        """Record ``score`` after ``iteration`` trees; True means stop."""
        if score < self.best_score - IMPROVEMENT_TOL:
            self.best_score = score
            self.best_iteration = iteration
        return iteration - self.best_iteration >= self.patience


def _check_config(max_depth, learning_rate, max_iters, patience, min_samples_leaf):
    if not 0 < learning_rate <= 1:
        raise ConfigError(f"learning_rate must be in (0, 1], got {learning_rate}")
    if max_depth < 0 or max_iters < 0 or patience < 1 or min_samples_leaf < 1:
        raise ConfigError("max_depth, max_iters >= 0; patience, min_samples_leaf >= 1")


def _rmse(y, pred):
    r = y - pred
    return float(np.sqrt(np.mean(r * r)))


class PointBoostRegressor(RegressorMixin, BaseEstimator):
    """Additive least-squares trees fitted to residuals.

    Prediction after ``k`` trees is ``base_score + learning_rate * sum(tree_t(x))``.
    All fitted trees are kept; ``predict`` truncates at ``best_iteration_``,
    the validation-RMSE minimiser (ties go to the earliest iteration).

    Parameters
    ----------
    max_depth : int
    learning_rate : float
    max_iters : int
        Upper bound on the number of trees.
    patience : int
        Stop after this many iterations without validation improvement.
    min_samples_leaf : int
    """

    def __init__(self, max_depth=6, learning_rate=0.05, max_iters=1000, patience=100, min_samples_leaf=1):
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.max_iters = max_iters
        self.patience = patience
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X, y, eval_set=None):
        _check_config(self.max_depth, self.learning_rate, self.max_iters, self.patience, self.min_samples_leaf)
        if eval_set is None:
            raise ConfigError("early stopping needs eval_set=(X_val, y_val)")
        X = check_features(X)
        y = check_target(y, X.shape[0])
        Xv = check_features(eval_set[0], X.shape[1])
        yv = check_target(eval_set[1], Xv.shape[0])

        base = float(np.mean(y))
        lr = float(self.learning_rate)
        pred = np.full(y.shape, base)
        pred_v = np.full(yv.shape, base)
        train_rmse = [_rmse(y, pred)]
        val_rmse = [_rmse(yv, pred_v)]
        stopper = EarlyStopping(val_rmse[0], self.patience)
        cols = presort(X)
        trees = []
        for it in range(1, self.max_iters + 1):
            tree = fit_tree(X, y - pred, self.max_depth, self.min_samples_leaf, sorted_columns=cols)
            trees.append(tree)
            pred = pred + lr * predict_tree(tree, X)
            pred_v = pred_v + lr * predict_tree(tree, Xv)
            train_rmse.append(_rmse(y, pred))
            val_rmse.append(_rmse(yv, pred_v))
            if stopper.update(it, val_rmse[-1]):
                break
        logger.info(
            "point booster: %d trees, best iteration %d (val RMSE %.5f)",
            len(trees), stopper.best_iteration, stopper.best_score,
        )
        self.base_score_ = base
        self.trees_ = trees
        self.best_iteration_ = stopper.best_iteration
        self.train_rmse_ = np.asarray(train_rmse)
        self.val_rmse_ = np.asarray(val_rmse)
        self.n_features_in_ = X.shape[1]
        self._packed = None
        return self

    @property
    def packed_(self) -> PackedTrees:
        check_is_fitted(self)
        if getattr(self, "_packed", None) is None:
            self._packed = PackedTrees.from_trees(self.trees_)
        return self._packed

    def tree_weights(self) -> np.ndarray:
        return np.full(len(self.trees_), float(self.learning_rate))

    def predict(self, X, iteration=None):
        """Standardised-log predictions using the first ``iteration`` trees
        (default ``best_iteration_``)."""
        check_is_fitted(self)
        X = check_features(X, self.n_features_in_, allow_empty=True)
        k = self.best_iteration_ if iteration is None else int(iteration)
        return predict_packed(self.packed_, X, self.tree_weights(), self.base_score_, k)


def fit_point_booster(
    train: Dataset, val: Dataset, transform: TargetTransform | None = None, **cfg
) -> PointBoostRegressor:
    """Fit on Datasets; the target transform defaults to one fitted on ``train``."""
    if len(train) == 0 or len(val) == 0:
        raise DataError("train and validation partitions must be non-empty")
    t = transform or TargetTransform.fit(train.throughput)
    model = PointBoostRegressor(**cfg)
    return model.fit(
        train.features, t.forward(train.throughput), eval_set=(val.features, t.forward(val.throughput))
    )


def predict_point(model: PointBoostRegressor, rows) -> np.ndarray:
    return model.predict(features_of(rows))

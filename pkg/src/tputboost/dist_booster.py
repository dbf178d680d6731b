"""Natural-gradient boosting of a Normal predictive distribution.

Each iteration fits one tree per parameter to the per-row natural gradient
of the NLL, picks a step scaling by halving line search on training NLL, and
subtracts ``learning_rate * rho * tree(x)`` from (mu, log sigma).
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_target, features_of
from .data import Dataset, TargetTransform
from .exceptions import ConfigError, DataError
from .point_booster import EarlyStopping, _check_config
from .prob import LOG_SIGMA_BOUND, NormalParams, natural_gradient, nll
from .tree import PackedTrees, fit_tree, predict_packed, predict_tree, presort

logger = logging.getLogger(__name__)

N_HALVINGS = 20


def _mean_nll(mu, log_sigma, y):
    return float(np.mean(nll(NormalParams(mu, np.clip(log_sigma, -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND)), y)))


def line_search_scale(current: NormalParams, tree_outputs, lr: float, y) -> float:
    """Largest rho in {1, 1/2, ..., 2**-20} whose update strictly lowers mean NLL.

    Falls back to ``2**-20`` when no candidate improves.
    """
    d_mu, d_ls = (np.asarray(a, dtype=float) for a in tree_outputs)
    y = np.asarray(y, dtype=float)
    before = _mean_nll(current.mu, current.log_sigma, y)
    for k in range(N_HALVINGS + 1):
        rho = 2.0**-k
        step = lr * rho
        after = _mean_nll(current.mu - step * d_mu, current.log_sigma - step * d_ls, y)
        if after < before:
            return rho
    return 2.0**-N_HALVINGS


class NormalBoostRegressor(RegressorMixin, BaseEstimator):
    """Distributional booster with a Normal output head.

    ``mu(x) = init_mu - lr * sum(rho_t * mu_tree_t(x))`` and likewise for
    ``log_sigma``, summed over the first ``best_iteration_`` iterations. The
    initial distribution is the mean and (population) standard deviation of
    the training targets. Early stopping tracks validation NLL.
    """

    def __init__(self, max_depth=3, learning_rate=0.05, max_iters=1000, patience=100, min_samples_leaf=1):
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

        mu0 = float(np.mean(y))
        sd = float(np.std(y))
        if sd > 0:
            ls0 = float(np.clip(np.log(sd), -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND))
        else:
            warnings.warn("training targets have zero spread; log_sigma starts at the lower clamp", RuntimeWarning)
            ls0 = -LOG_SIGMA_BOUND
        lr = float(self.learning_rate)

        mu, ls = np.full(y.shape, mu0), np.full(y.shape, ls0)
        mu_v, ls_v = np.full(yv.shape, mu0), np.full(yv.shape, ls0)
        train_nll = [_mean_nll(mu, ls, y)]
        val_nll = [_mean_nll(mu_v, ls_v, yv)]
        stopper = EarlyStopping(val_nll[0], self.patience)
        cols = presort(X)
        mu_trees, ls_trees, scalings, accepted = [], [], [], []

        for it in range(1, self.max_iters + 1):
            current = NormalParams(mu, np.clip(ls, -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND))
            g_mu, g_ls = natural_gradient(current, y)
            t_mu = fit_tree(X, g_mu, self.max_depth, self.min_samples_leaf, sorted_columns=cols)
            t_ls = fit_tree(X, g_ls, self.max_depth, self.min_samples_leaf, sorted_columns=cols)
            o_mu, o_ls = predict_tree(t_mu, X), predict_tree(t_ls, X)
            rho = line_search_scale(NormalParams(mu, ls), (o_mu, o_ls), lr, y)
            w = -(lr * rho)
            mu = mu + w * o_mu
            ls = ls + w * o_ls
            mu_v = mu_v + w * predict_tree(t_mu, Xv)
            ls_v = ls_v + w * predict_tree(t_ls, Xv)

            mu_trees.append(t_mu)
            ls_trees.append(t_ls)
            scalings.append(rho)
            train_nll.append(_mean_nll(mu, ls, y))
            accepted.append(train_nll[-1] < train_nll[-2])
            val_nll.append(_mean_nll(mu_v, ls_v, yv))
            if stopper.update(it, val_nll[-1]):
                break

        logger.info(
            "dist booster: %d iterations, best %d (val NLL %.5f)",
            len(scalings), stopper.best_iteration, stopper.best_score,
        )
        self.init_ = NormalParams(mu0, ls0)
        self.mu_trees_ = mu_trees
        self.logsigma_trees_ = ls_trees
        self.scalings_ = np.asarray(scalings, dtype=float)
        self.best_iteration_ = stopper.best_iteration
        self.train_nll_ = np.asarray(train_nll)
        self.val_nll_ = np.asarray(val_nll)
        self.accepted_ = np.asarray(accepted, dtype=bool)
        self.n_features_in_ = X.shape[1]
        self._packed = {}
        return self

    def packed(self, head: str) -> PackedTrees:
        check_is_fitted(self)
        if head not in ("mu", "log_sigma"):
            raise ValueError(f"head must be 'mu' or 'log_sigma', got {head!r}")
        cache = getattr(self, "_packed", None)
        if cache is None:
            cache = self._packed = {}
        if head not in cache:
            cache[head] = PackedTrees.from_trees(self.mu_trees_ if head == "mu" else self.logsigma_trees_)
        return cache[head]

    def tree_weights(self) -> np.ndarray:
        return -(float(self.learning_rate) * self.scalings_)

    def base(self, head: str) -> float:
        return float(self.init_.mu if head == "mu" else self.init_.log_sigma)

    def predict_head(self, X, head: str, iteration=None) -> np.ndarray:
        """Raw additive output of one head (log_sigma unclamped)."""
        check_is_fitted(self)
        X = check_features(X, self.n_features_in_, allow_empty=True)
        k = self.best_iteration_ if iteration is None else int(iteration)
        return predict_packed(self.packed(head), X, self.tree_weights(), self.base(head), k)

    def pred_dist(self, X, iteration=None) -> NormalParams:
        mu = self.predict_head(X, "mu", iteration)
        ls = self.predict_head(X, "log_sigma", iteration)
        return NormalParams(mu, np.clip(ls, -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND))

    def predict(self, X, iteration=None):
        """Predictive mean (= median) in standardised-log units."""
        return self.predict_head(X, "mu", iteration)


def fit_dist_booster(
    train: Dataset, val: Dataset, transform: TargetTransform | None = None, **cfg
) -> NormalBoostRegressor:
    if len(train) == 0 or len(val) == 0:
        raise DataError("train and validation partitions must be non-empty")
    t = transform or TargetTransform.fit(train.throughput)
    model = NormalBoostRegressor(**cfg)
    return model.fit(
        train.features, t.forward(train.throughput), eval_set=(val.features, t.forward(val.throughput))
    )


def predict_dist(model: NormalBoostRegressor, rows) -> NormalParams:
    return model.pred_dist(features_of(rows))

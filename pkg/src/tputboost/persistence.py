"""Self-contained JSON model files (trees + encoders + target transform)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .data import CategoryEncoder, SplitBoundaries, TargetTransform, transform_invert
from .dist_booster import NormalBoostRegressor
from .exceptions import ModelIntegrityError
from .point_booster import PointBoostRegressor
from .prob import NormalParams
from .tree import TreeArrays

FORMAT_VERSION = 1
CONFIG_KEYS = ("max_depth", "learning_rate", "max_iters", "patience", "min_samples_leaf")


@dataclass
class ThroughputModel:
    """A fitted booster plus everything needed to score raw records."""

    estimator: PointBoostRegressor | NormalBoostRegressor
    transform: TargetTransform
    feature_names: tuple[str, ...]
    feature_category: tuple[str, ...]
    encoders: dict[str, CategoryEncoder] = field(default_factory=dict)
    tech: str | None = None
    split: SplitBoundaries | None = None

    @property
    def model_type(self) -> str:
        return "dist" if isinstance(self.estimator, NormalBoostRegressor) else "point"

    def predict(self, X) -> np.ndarray:
        """Point prediction in standardised-log units (the mean for ``dist``)."""
        return self.estimator.predict(X)

    def pred_dist(self, X) -> NormalParams:
        if self.model_type != "dist":
            raise TypeError("point models have no predictive distribution")
        return self.estimator.pred_dist(X)

    def predict_kbps(self, X) -> np.ndarray:
        return transform_invert(self.predict(X), self.transform)


def _history(values) -> list[float]:
    return [float(v) for v in values]


def model_to_dict(model: ThroughputModel) -> dict:
    est = model.estimator
    out = {
        "format_version": FORMAT_VERSION,
        "model_type": model.model_type,
        "package_version": __version__,
        "config": {k: getattr(est, k) for k in CONFIG_KEYS},
        "tech": model.tech,
        "feature_names": list(model.feature_names),
        "feature_category": list(model.feature_category),
        "encoders": {name: enc.to_dict() for name, enc in model.encoders.items()},
        "target_transform": model.transform.to_dict(),
        "split": model.split.to_dict() if model.split else None,
        "n_features": int(est.n_features_in_),
        "learning_rate": float(est.learning_rate),
        "best_iteration": int(est.best_iteration_),
    }
    if model.model_type == "point":
        out["base_score"] = float(est.base_score_)
        out["history"] = {"train_rmse": _history(est.train_rmse_), "val_rmse": _history(est.val_rmse_)}
        out["trees"] = [t.to_dict() for t in est.trees_]
    else:
        out["init"] = {"mu": float(est.init_.mu), "log_sigma": float(est.init_.log_sigma)}
        out["scalings"] = _history(est.scalings_)
        out["history"] = {
            "train_nll": _history(est.train_nll_),
            "val_nll": _history(est.val_nll_),
            "accepted": [bool(a) for a in est.accepted_],
        }
        out["mu_trees"] = [t.to_dict() for t in est.mu_trees_]
        out["logsigma_trees"] = [t.to_dict() for t in est.logsigma_trees_]
    return out


def _require(d: dict, key: str, kind, check=None):
    if key not in d:
        raise ModelIntegrityError("missing", field=key)
    value = d[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ModelIntegrityError(f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}", field=key)
    if kind is float and not math.isfinite(value):
        raise ModelIntegrityError("not finite", field=key)
    if check is not None and not check(value):
        raise ModelIntegrityError(f"value {value!r} out of range", field=key)
    return value


def _trees(d: dict, key: str) -> list[TreeArrays]:
    raw = _require(d, key, list)
    trees = []
    for i, t in enumerate(raw):
        if not isinstance(t, dict):
            raise ModelIntegrityError("tree entry is not an object", field=f"{key}[{i}]")
        try:
            trees.append(TreeArrays.from_dict(t))
        except ModelIntegrityError as exc:
            raise ModelIntegrityError(str(exc), field=f"{key}[{i}].{exc.field}") from None
    return trees


def model_from_dict(d: dict) -> ThroughputModel:
    if not isinstance(d, dict):
        raise ModelIntegrityError("top level is not an object", field="<root>")
    version = _require(d, "format_version", int)
    if version != FORMAT_VERSION:
        raise ModelIntegrityError(f"unsupported version {version}", field="format_version")
    model_type = _require(d, "model_type", str, lambda v: v in ("point", "dist"))
    config = _require(d, "config", dict)
    for k in CONFIG_KEYS:
        _require(config, k, float if k == "learning_rate" else int)
    tech = d.get("tech")
    names = tuple(_require(d, "feature_names", list))
    cats = tuple(_require(d, "feature_category", list))
    if len(cats) != len(names):
        raise ModelIntegrityError("length differs from feature_names", field="feature_category")
    try:
        encoders = {
            name: CategoryEncoder(mapping, frozen=True) for name, mapping in _require(d, "encoders", dict).items()
        }
    except Exception as exc:
        raise ModelIntegrityError(str(exc), field="encoders") from None
    tt = _require(d, "target_transform", dict)
    try:
        transform = TargetTransform(
            _require(tt, "mu_train", float), _require(tt, "sigma_train", float, lambda v: v > 0)
        )
    except ModelIntegrityError as exc:
        raise ModelIntegrityError(str(exc), field=f"target_transform.{exc.field}") from None
    split = d.get("split")
    if split is not None:
        split = SplitBoundaries(float(split["val_start"]), float(split["test_start"]))
    n_features = _require(d, "n_features", int, lambda v: v == len(names))
    lr = _require(d, "learning_rate", float, lambda v: 0 < v <= 1)
    best = _require(d, "best_iteration", int, lambda v: v >= 0)
    history = _require(d, "history", dict)

    if model_type == "point":
        est = PointBoostRegressor(**config)
        est.base_score_ = _require(d, "base_score", float)
        est.trees_ = _trees(d, "trees")
        n_iter = len(est.trees_)
        est.train_rmse_ = np.asarray(history.get("train_rmse", []), dtype=float)
        est.val_rmse_ = np.asarray(history.get("val_rmse", []), dtype=float)
    else:
        est = NormalBoostRegressor(**config)
        init = _require(d, "init", dict)
        est.init_ = NormalParams(_require(init, "mu", float), _require(init, "log_sigma", float))
        est.scalings_ = np.asarray(
            _require(d, "scalings", list, lambda v: all(isinstance(x, (int, float)) and x > 0 for x in v)),
            dtype=float,
        )
        est.mu_trees_ = _trees(d, "mu_trees")
        est.logsigma_trees_ = _trees(d, "logsigma_trees")
        n_iter = len(est.scalings_)
        if len(est.mu_trees_) != n_iter or len(est.logsigma_trees_) != n_iter:
            raise ModelIntegrityError("tree lists and scalings differ in length", field="logsigma_trees")
        est.train_nll_ = np.asarray(history.get("train_nll", []), dtype=float)
        est.val_nll_ = np.asarray(history.get("val_nll", []), dtype=float)
        est.accepted_ = np.asarray(history.get("accepted", []), dtype=bool)
        est._packed = {}
    if lr != est.learning_rate:
        raise ModelIntegrityError("disagrees with config.learning_rate", field="learning_rate")
    if best > n_iter:
        raise ModelIntegrityError(f"{best} exceeds {n_iter} fitted iterations", field="best_iteration")
    est.best_iteration_ = best
    est.n_features_in_ = n_features
    return ThroughputModel(
        estimator=est,
        transform=transform,
        feature_names=names,
        feature_category=cats,
        encoders=encoders,
        tech=tech,
        split=split,
    )


def save_model(model: ThroughputModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> ThroughputModel:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelIntegrityError(f"not valid JSON ({exc.msg} at char {exc.pos})", field="<file>") from None
    return model_from_dict(payload)

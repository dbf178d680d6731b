"""Point and probabilistic evaluation: MAE/RMSE/R2, CRPS, calibration and C-AUC."""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .data import TargetTransform, transform_invert
from .exceptions import DataError
from .prob import NormalParams, crps_normal, crps_point, normal_quantile

DEFAULT_GRID = np.round(np.concatenate([[0.0], np.arange(1, 20) * 0.05, [1.0]]), 10)


@dataclass(frozen=True)
class PointMetrics:
    mae_std: float
    rmse_std: float
    mae_kbps: float
    rmse_kbps: float
    r2: float | None

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CalibrationCurve:
    nominal: np.ndarray
    empirical: np.ndarray

    def __post_init__(self):
        if self.nominal.shape != self.empirical.shape:
            raise DataError("nominal and empirical grids differ in length")


@dataclass(frozen=True)
class ProbMetrics:
    crps_std: float
    c_auc: float
    coverage95: float

    def to_dict(self):
        return asdict(self)


def _pair(y, pred):
    y = np.asarray(y, dtype=float).ravel()
    pred = np.asarray(pred, dtype=float).ravel()
    if y.shape != pred.shape:
        raise DataError(f"length mismatch: {y.size} targets, {pred.size} predictions")
    return y, pred


def point_metrics(y, pred, t: TargetTransform) -> PointMetrics:
    """Errors in standardised-log units and, after back-transforming both
    sides, in kbps. R2 is None when ``y`` has zero variance."""
    y, pred = _pair(y, pred)
    if y.size < 2:
        raise DataError("need at least two rows")
    err = y - pred
    ss_res = float(np.sum(err * err))
    dev = y - np.mean(y)
    ss_tot = float(np.sum(dev * dev))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        warnings.warn("R2 undefined: targets have zero variance", RuntimeWarning, stacklevel=2)
        r2 = None
    err_kbps = transform_invert(y, t) - transform_invert(pred, t)
    return PointMetrics(
        mae_std=float(np.mean(np.abs(err))),
        rmse_std=math.sqrt(ss_res / y.size),
        mae_kbps=float(np.mean(np.abs(err_kbps))),
        rmse_kbps=float(np.sqrt(np.mean(err_kbps * err_kbps))),
        r2=r2,
    )


def crps_mean(preds, y) -> float:
    """Mean CRPS; ``preds`` is a NormalParams or an array of point forecasts."""
    y = np.asarray(y, dtype=float).ravel()
    if isinstance(preds, NormalParams):
        if preds.mu.size != y.size:
            raise DataError(f"length mismatch: {y.size} targets, {preds.mu.size} predictions")
        scores = crps_normal(preds, y)
    else:
        y, pred = _pair(y, preds)
        scores = crps_point(pred, y)
    if y.size == 0:
        raise DataError("need at least one row")
    return float(np.mean(scores))


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0 or np.any((grid < 0) | (grid > 1)) or not np.all(np.isfinite(grid)):
        raise DataError("calibration grid must lie in [0, 1]")
    if np.any(np.diff(grid) <= 0):
        raise DataError("calibration grid must be strictly increasing")
    return grid


def interval_coverage(preds: NormalParams, y, c: float) -> float:
    """Fraction of ``y`` inside the closed central ``c`` interval."""
    y = np.asarray(y, dtype=float).ravel()
    if preds.mu.size != y.size:
        raise DataError(f"length mismatch: {y.size} targets, {preds.mu.size} predictions")
    if c <= 0:
        return 0.0
    if c >= 1:
        return 1.0
    half = normal_quantile(0.5 + c / 2.0)
    lo = preds.mu - preds.sigma * half
    hi = preds.mu + preds.sigma * half
    return float(np.mean((y >= lo) & (y <= hi)))


def calibration_curve(preds: NormalParams, y, grid=DEFAULT_GRID) -> CalibrationCurve:
    grid = _check_grid(grid)
    emp = np.array([interval_coverage(preds, y, c) for c in grid])
    return CalibrationCurve(nominal=grid, empirical=emp)


def c_auc(curve: CalibrationCurve) -> float:
    """Trapezoidal area between the calibration curve and the diagonal."""
    c = np.asarray(curve.nominal, dtype=float)
    if c.size < 2 or c[0] != 0.0 or c[-1] != 1.0:
        raise DataError("calibration curve must include the endpoints 0 and 1")
    if np.any(np.diff(c) <= 0):
        raise DataError("calibration grid is not sorted")
    gap = np.abs(np.asarray(curve.empirical, dtype=float) - c)
    return float(np.sum(0.5 * (gap[1:] + gap[:-1]) * np.diff(c)))


def prob_metrics(preds: NormalParams, y, grid=DEFAULT_GRID) -> tuple[ProbMetrics, CalibrationCurve]:
    curve = calibration_curve(preds, y, grid)
    return (
        ProbMetrics(
            crps_std=crps_mean(preds, y),
            c_auc=c_auc(curve),
            coverage95=interval_coverage(preds, y, 0.95),
        ),
        curve,
    )


def write_calibration_csv(curve: CalibrationCurve, dest) -> None:
    own = isinstance(dest, (str, os.PathLike))
    handle = open(dest, "w", encoding="utf-8", newline="") if own else dest
    try:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(["nominal", "empirical"])
        for c, e in zip(curve.nominal, curve.empirical):
            w.writerow([repr(float(c)), repr(float(e))])
    finally:
        if own:
            handle.close()

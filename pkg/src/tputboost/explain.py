"""Exact TreeSHAP attributions and mean-|SHAP| importance reports.

The game being attributed is the path-dependent one: the value of a
coalition S is the expected tree output when features in S follow the row
(missing values take the default branch) and every other split is averaged
by node cover. Attributions are exact Shapley values of that game,
computed with the polynomial-time path algorithm (extend / unwind over the
unique-feature path from root to each leaf).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._validation import check_features, features_of
from .data import CATEGORIES
from .exceptions import DataError, ModelIntegrityError
from .tree import PackedTrees, TreeArrays

DEFAULT_EXPLAIN_CAP = 20_000

HEAD_LABELS = {"mu": "mu", "log_sigma": "sigma (log-scale)"}


@dataclass(frozen=True)
class Attribution:
    """``base + values.sum(-1)`` reproduces the model output per row."""

    values: np.ndarray
    base: float

    @property
    def output(self) -> np.ndarray:
        return self.base + self.values.sum(axis=-1)


@njit(cache=True)
def _extend(pf, pz, po, pw, s, depth, zero, one, feat):
    pf[s + depth] = feat
    pz[s + depth] = zero
    po[s + depth] = one
    pw[s + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[s + i + 1] += one * pw[s + i] * (i + 1) / (depth + 1)
        pw[s + i] = zero * pw[s + i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(pf, pz, po, pw, s, depth, idx):
    one = po[s + idx]
    zero = pz[s + idx]
    nxt = pw[s + depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[s + i]
            pw[s + i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[s + i] * zero * (depth - i) / (depth + 1)
        else:
            pw[s + i] = pw[s + i] * (depth + 1) / (zero * (depth - i))
    for i in range(idx, depth):
        pf[s + i] = pf[s + i + 1]
        pz[s + i] = pz[s + i + 1]
        po[s + i] = po[s + i + 1]


@njit(cache=True)
def _unwound_sum(pz, po, pw, s, depth, idx):
    one = po[s + idx]
    zero = pz[s + idx]
    nxt = pw[s + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = nxt * (depth + 1) / ((i + 1) * one)
            total += tmp
            nxt = pw[s + i] - tmp * zero * (depth - i) / (depth + 1)
        else:
            total += pw[s + i] / zero / ((depth - i) / (depth + 1))
    return total


@njit(cache=True)
def _walk(x, feature, threshold, default_left, left, right, value, cover, off,
          phi, scale, pf, pz, po, pw, st_node, st_s, st_depth, st_zero, st_one, st_feat):
    # Depth-first over one tree with an explicit stack (numba's disk cache
    # cannot reload self-recursive functions). A child's path lives at
    # slot s = parent_s + depth + 1, above its parent's, so the parent's path
    # is intact when the second child is popped.
    st_node[0] = 0
    st_s[0] = 0
    st_depth[0] = 0
    st_zero[0] = 1.0
    st_one[0] = 1.0
    st_feat[0] = -1
    top = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        parent_s = st_s[top]
        depth = st_depth[top]
        s = parent_s + depth + 1
        for i in range(depth + 1):
            pf[s + i] = pf[parent_s + i]
            pz[s + i] = pz[parent_s + i]
            po[s + i] = po[parent_s + i]
            pw[s + i] = pw[parent_s + i]
        _extend(pf, pz, po, pw, s, depth, st_zero[top], st_one[top], st_feat[top])

        g = off + node
        if left[g] == -1:
            for i in range(1, depth + 1):
                w = _unwound_sum(pz, po, pw, s, depth, i)
                phi[pf[s + i]] += w * (po[s + i] - pz[s + i]) * value[g] * scale
            continue

        d = feature[g]
        xv = x[d]
        if np.isnan(xv):
            go_left = default_left[g]
        else:
            go_left = xv < threshold[g]
        hot = left[g] if go_left else right[g]
        cold = right[g] if go_left else left[g]
        w = cover[g]

        in_zero = 1.0
        in_one = 1.0
        k = 1
        while k <= depth:
            if pf[s + k] == d:
                break
            k += 1
        if k <= depth:
            in_zero = pz[s + k]
            in_one = po[s + k]
            _unwind(pf, pz, po, pw, s, depth, k)
            depth -= 1

        # cold pushed first so the hot branch is expanded first
        st_node[top] = cold
        st_s[top] = s
        st_depth[top] = depth + 1
        st_zero[top] = cover[off + cold] / w * in_zero
        st_one[top] = 0.0
        st_feat[top] = d
        st_node[top + 1] = hot
        st_s[top + 1] = s
        st_depth[top + 1] = depth + 1
        st_zero[top + 1] = cover[off + hot] / w * in_zero
        st_one[top + 1] = in_one
        st_feat[top + 1] = d
        top += 2


@njit(cache=True)
def _shap_rows(X, feature, threshold, default_left, left, right, value, cover, offsets,
               weights, n_trees, max_depth):
    n, p = X.shape
    phi = np.zeros((n, p))
    size = (max_depth + 3) * (max_depth + 4)
    pf = np.zeros(size, np.int64)
    pz = np.zeros(size)
    po = np.zeros(size)
    pw = np.zeros(size)
    m = 2 * max_depth + 4
    st_node = np.zeros(m, np.int64)
    st_s = np.zeros(m, np.int64)
    st_depth = np.zeros(m, np.int64)
    st_zero = np.zeros(m)
    st_one = np.zeros(m)
    st_feat = np.zeros(m, np.int64)
    for r in range(n):
        for t in range(n_trees):
            off = offsets[t]
            if left[off] == -1:
                continue
            _walk(X[r], feature, threshold, default_left, left, right, value, cover, off,
                  phi[r], weights[t], pf, pz, po, pw, st_node, st_s, st_depth, st_zero, st_one, st_feat)
    return phi


@njit(cache=True)
def _expected_values(value, cover, left, offsets, n_trees):
    out = np.zeros(n_trees)
    for t in range(n_trees):
        off = offsets[t]
        total = cover[off]
        acc = 0.0
        for g in range(off, offsets[t + 1]):
            if left[g] == -1:
                acc += cover[g] / total * value[g]
        out[t] = acc
    return out


def _check_covers(packed: PackedTrees):
    if packed.cover.size and np.any(packed.cover <= 0):
        raise ModelIntegrityError("zero-cover node; cannot weight unseen branches", field="cover")


def shap_packed(packed: PackedTrees, X, weights, base: float, n_trees: int, max_depth: int) -> Attribution:
    """Attributions of ``base + sum_t weights[t] * tree_t(x)`` over the first
    ``n_trees`` trees."""
    _check_covers(packed)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    ev = _expected_values(packed.value, packed.cover, packed.left, packed.offsets, n_trees)
    acc = float(base)
    for t in range(n_trees):
        acc += weights[t] * ev[t]
    phi = _shap_rows(
        X, packed.feature, packed.threshold, packed.default_left, packed.left, packed.right,
        packed.value, packed.cover, packed.offsets, weights, n_trees, max_depth,
    )
    return Attribution(values=phi, base=acc)


def tree_shap(tree: TreeArrays, X) -> Attribution:
    """SHAP values of a single tree for one row or a matrix of rows."""
    single = np.ndim(X) == 1
    X = check_features(np.atleast_2d(X))
    used = tree.used_features()
    if used and X.shape[1] <= max(used):
        raise DataError(f"rows have {X.shape[1]} features; tree splits on feature {max(used)}")
    packed = PackedTrees.from_trees([tree])
    att = shap_packed(packed, X, np.ones(1), 0.0, 1, tree.depth())
    return Attribution(att.values[0], att.base) if single else att


def _heads(model):
    if hasattr(model, "logsigma_trees_"):
        return ("mu", "log_sigma")
    return ("mu",)


def ensemble_shap(model, X, head: str = "mu", iteration=None) -> Attribution:
    """Attributions for a fitted booster.

    For :class:`~tputboost.point_booster.PointBoostRegressor` only the ``mu``
    head exists. For the distributional booster ``head`` picks the mean or
    the log-sigma ensemble; attributions are in that head's native units.
    """
    if head not in _heads(model):
        raise ValueError(f"model has heads {_heads(model)}, not {head!r}")
    single = np.ndim(X) == 1
    X = check_features(np.atleast_2d(features_of(X)), model.n_features_in_, allow_empty=True)
    k = model.best_iteration_ if iteration is None else int(iteration)
    if hasattr(model, "logsigma_trees_"):
        packed, base = model.packed(head), model.base(head)
    else:
        packed, base = model.packed_, model.base_score_
    max_depth = max([int(model.max_depth)] + [0])
    att = shap_packed(packed, X, model.tree_weights(), base, k, max_depth)
    return Attribution(att.values[0], att.base) if single else att


def subsample_rows(n: int, cap: int = DEFAULT_EXPLAIN_CAP) -> np.ndarray:
    """Deterministic stride subsample of at most ``cap`` row indices."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    stride = max(1, math.ceil(n / cap))
    return np.arange(0, n, stride)


@dataclass(frozen=True)
class ImportanceReport:
    head: str
    feature_names: tuple[str, ...]
    feature_category: tuple[str, ...]
    mean_abs: np.ndarray
    normalized: np.ndarray
    category_sums: dict[str, float]
    e2e_radio_ratio: float | None

    @property
    def label(self) -> str:
        return HEAD_LABELS.get(self.head, self.head)

    def category_shares(self, category: str) -> dict[str, float]:
        """Each feature's share of its category's summed importance."""
        total = self.category_sums[category]
        return {
            f: (float(m) / total if total > 0 else 0.0)
            for f, c, m in zip(self.feature_names, self.feature_category, self.mean_abs)
            if c == category
        }

    def rows(self):
        for f, c, m, z in zip(self.feature_names, self.feature_category, self.mean_abs, self.normalized):
            yield f, c, float(m), float(z)


def summarize_attributions(
    values: np.ndarray, feature_names, feature_category, head: str = "mu"
) -> ImportanceReport:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] == 0:
        raise DataError("explanation set is empty")
    if values.shape[1] != len(feature_names) or len(feature_category) != len(feature_names):
        raise DataError("feature names/categories do not match attribution width")
    mean_abs = np.mean(np.abs(values), axis=0)
    top = float(mean_abs.max())
    normalized = mean_abs / top if top > 0 else np.zeros_like(mean_abs)
    cats = np.asarray(feature_category)
    sums = {c: float(mean_abs[cats == c].sum()) for c in CATEGORIES}
    ratio = sums["e2e"] / sums["radio"] if sums["radio"] > 0 else None
    return ImportanceReport(
        head=head,
        feature_names=tuple(feature_names),
        feature_category=tuple(feature_category),
        mean_abs=mean_abs,
        normalized=normalized,
        category_sums=sums,
        e2e_radio_ratio=ratio,
    )


def importance_report(
    model, X_explain, feature_names=None, feature_category=None, cap: int = DEFAULT_EXPLAIN_CAP
) -> dict[str, ImportanceReport]:
    """Mean |SHAP| per feature, one report per model head.

    ``X_explain`` may be a Dataset (names and categories are taken from it)
    or a matrix together with ``feature_names`` / ``feature_category``.
    """
    if hasattr(X_explain, "feature_names") and hasattr(X_explain, "throughput"):
        feature_names = feature_names or X_explain.feature_names
        feature_category = feature_category or X_explain.feature_category
    X = np.asarray(features_of(X_explain), dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("explanation set is empty")
    X = X[subsample_rows(X.shape[0], cap)]
    return {
        head: summarize_attributions(ensemble_shap(model, X, head).values, feature_names, feature_category, head)
        for head in _heads(model)
    }

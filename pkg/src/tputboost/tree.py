"""Least-squares regression trees with learned missing-value directions.

Splits are found by exact greedy search over midpoints of consecutive
distinct values. At each candidate the rows with a missing value are sent
left and then right; the better side becomes the node's default direction.
Node covers (training row counts) are kept for TreeSHAP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_target
from .exceptions import DataError, ModelIntegrityError

LEAF = -1

# A split must beat this fraction of the node's sum of squared targets; below
# it the "gain" is float rounding noise (e.g. a constant target).
_REL_GAIN_TOL = 1e-14


@dataclass(frozen=True)
class TreeArrays:
    """Flat node arrays, root at index 0. ``left == -1`` marks a leaf.

    Internal nodes send a row left iff ``x < threshold``; missing values
    follow ``default_left``. ``value`` holds the mean training target of every
    node, which for leaves is the prediction.
    """

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    max_depth: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left == LEAF

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.left[i] != LEAF:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def used_features(self) -> set[int]:
        return {int(f) for f, l in zip(self.feature, self.left) if l != LEAF}

    def validate(self) -> None:
        n = self.n_nodes
        if n == 0:
            raise ModelIntegrityError("tree has no nodes", field="nodes")
        for name in ("threshold", "default_left", "left", "right", "value", "cover"):
            if len(getattr(self, name)) != n:
                raise ModelIntegrityError(f"length {len(getattr(self, name))} != {n}", field=name)
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        for i in range(n):
            if self.cover[i] <= 0:
                raise ModelIntegrityError(f"node {i} has cover {self.cover[i]}", field="cover")
            l, r = int(self.left[i]), int(self.right[i])
            if l == LEAF:
                if r != LEAF:
                    raise ModelIntegrityError(f"node {i} has one child", field="right")
                continue
            for c, name in ((l, "left"), (r, "right")):
                if not (i < c < n) or seen[c]:
                    raise ModelIntegrityError(f"node {i} has bad child {c}", field=name)
                seen[c] = True
            if self.feature[i] < 0:
                raise ModelIntegrityError(f"internal node {i} has no feature", field="feature")
            if not np.isfinite(self.threshold[i]):
                raise ModelIntegrityError(f"node {i} threshold not finite", field="threshold")
            if self.cover[l] + self.cover[r] != self.cover[i]:
                raise ModelIntegrityError(f"cover of node {i} is not conserved", field="cover")
        if not seen.all():
            raise ModelIntegrityError("unreachable nodes", field="left")
        if self.depth() > self.max_depth:
            raise ModelIntegrityError("tree deeper than max_depth", field="max_depth")

    def to_dict(self) -> dict:
        return {
            "max_depth": int(self.max_depth),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "default_left": self.default_left.astype(bool).tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeArrays":
        try:
            tree = cls(
                feature=np.asarray(d["feature"], dtype=np.int64),
                threshold=np.asarray(d["threshold"], dtype=np.float64),
                default_left=np.asarray(d["default_left"], dtype=np.bool_),
                left=np.asarray(d["left"], dtype=np.int64),
                right=np.asarray(d["right"], dtype=np.int64),
                value=np.asarray(d["value"], dtype=np.float64),
                cover=np.asarray(d["cover"], dtype=np.float64),
                max_depth=int(d["max_depth"]),
            )
        except KeyError as exc:
            raise ModelIntegrityError("missing", field=exc.args[0]) from None
        except (TypeError, ValueError) as exc:
            raise ModelIntegrityError(str(exc), field="tree") from None
        tree.validate()
        return tree


@dataclass(frozen=True)
class SortedColumns:
    """Per-feature row order (ascending, NaN last) and the matching values.

    Boosting reuses one instance across all trees of a fit.
    """

    order: np.ndarray
    values: np.ndarray

    @classmethod
    def from_matrix(cls, X: np.ndarray) -> "SortedColumns":
        order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
        values = np.ascontiguousarray(np.take_along_axis(X.T, order, axis=1))
        return cls(order, values)


presort = SortedColumns.from_matrix


@njit(cache=True)
def _partition(arr_i, arr_v, arr_y, f, start, end, goes_left, buf_i, buf_v, buf_y):
    li = start
    ri = 0
    for k in range(start, end):
        r = arr_i[f, k]
        if goes_left[r]:
            arr_i[f, li] = r
            arr_v[f, li] = arr_v[f, k]
            arr_y[f, li] = arr_y[f, k]
            li += 1
        else:
            buf_i[ri] = r
            buf_v[ri] = arr_v[f, k]
            buf_y[ri] = arr_y[f, k]
            ri += 1
    for k in range(ri):
        arr_i[f, li + k] = buf_i[k]
        arr_v[f, li + k] = buf_v[k]
        arr_y[f, li + k] = buf_y[k]


@njit(cache=True)
def _build(order, vals, y, max_depth, min_leaf):
    p, n = order.shape
    cap = 2 * n - 1
    if max_depth < 30:
        cap = min(cap, 2 ** (max_depth + 1) - 1)
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    default_left = np.zeros(cap, np.bool_)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap)

    # targets laid out in each feature's sorted order so scans are sequential
    ys = np.empty((p, n))
    for f in range(p):
        for k in range(n):
            ys[f, k] = y[order[f, k]]

    goes_left = np.zeros(n, np.bool_)
    buf_i = np.empty(n, np.int64)
    buf_v = np.empty(n)
    buf_y = np.empty(n)

    # work stack of (node, start, end, depth)
    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        cnt = end - start

        s_all = 0.0
        ss_all = 0.0
        for k in range(start, end):
            v = ys[0, k]
            s_all += v
            ss_all += v * v
        value[node] = s_all / cnt
        cover[node] = cnt

        if depth >= max_depth or cnt < 2 * min_leaf:
            continue

        best_gain = _REL_GAIN_TOL * ss_all
        best_f = -1
        best_thr = 0.0
        best_dl = True
        for f in range(p):
            # NaNs sit at the tail of every segment
            k = end
            s_miss = 0.0
            while k > start and np.isnan(vals[f, k - 1]):
                k -= 1
                s_miss += ys[f, k]
            m = k - start
            if m == 0:
                continue
            n_miss = cnt - m
            s_nm = s_all - s_miss

            s_l = 0.0
            for i in range(m - 1):
                s_l += ys[f, start + i]
                a = vals[f, start + i]
                b = vals[f, start + i + 1]
                if not (a < b):
                    continue
                thr = 0.5 * (a + b)
                if not (thr > a):
                    thr = b
                n_l = i + 1
                n_r = m - n_l
                if n_miss > 0:
                    # missing rows sent left
                    nl = n_l + n_miss
                    sl = s_l + s_miss
                    nr = n_r
                    sr = s_nm - s_l
                    if nl >= min_leaf and nr >= min_leaf:
                        d = sl / nl - sr / nr
                        g = nl * nr / cnt * d * d
                        if g > best_gain:
                            best_gain, best_f, best_thr, best_dl = g, f, thr, True
                    # missing rows sent right
                    nl = n_l
                    sl = s_l
                    nr = n_r + n_miss
                    sr = s_nm - s_l + s_miss
                    if nl >= min_leaf and nr >= min_leaf:
                        d = sl / nl - sr / nr
                        g = nl * nr / cnt * d * d
                        if g > best_gain:
                            best_gain, best_f, best_thr, best_dl = g, f, thr, False
                elif n_l >= min_leaf and n_r >= min_leaf:
                    d = s_l / n_l - (s_nm - s_l) / n_r
                    g = n_l * n_r / cnt * d * d
                    if g > best_gain:
                        best_gain, best_f, best_thr = g, f, thr
                        # no missing rows seen here: default to the larger child
                        best_dl = n_l >= n_r

        if best_f < 0:
            continue

        n_left = 0
        for k in range(start, end):
            x = vals[best_f, k]
            if np.isnan(x):
                gl = best_dl
            else:
                gl = x < best_thr
            goes_left[order[best_f, k]] = gl
            if gl:
                n_left += 1
        n_right = cnt - n_left
        grow = depth + 1 < max_depth and (n_left >= 2 * min_leaf or n_right >= 2 * min_leaf)
        # children that stay leaves only need feature 0's segment for their sums
        n_part = p if grow else 1
        for f in range(n_part):
            _partition(order, vals, ys, f, start, end, goes_left, buf_i, buf_v, buf_y)

        feature[node] = best_f
        threshold[node] = best_thr
        default_left[node] = best_dl
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        # push right first so the left subtree is expanded first
        st_node[top] = rc
        st_start[top] = start + n_left
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lc
        st_start[top] = start
        st_end[top] = start + n_left
        st_depth[top] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        default_left[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        cover[:n_nodes].copy(),
    )


@njit(cache=True)
def _leaf_of(x, feature, threshold, default_left, left, right, base):
    node = base
    while left[node] != -1:
        v = x[feature[node]]
        if np.isnan(v):
            go_left = default_left[node]
        else:
            go_left = v < threshold[node]
        node = base + (left[node] if go_left else right[node])
    return node


@njit(cache=True)
def _predict_tree(X, feature, threshold, default_left, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = value[_leaf_of(X[i], feature, threshold, default_left, left, right, 0)]
    return out


def fit_tree(
    X, y, max_depth: int = 3, min_samples_leaf: int = 1, sorted_columns: SortedColumns | None = None
) -> TreeArrays:
    """Fit a least-squares tree.

    ``sorted_columns`` may carry a precomputed :func:`presort` of ``X``; it is
    copied, not modified.
    """
    X = check_features(X)
    y = check_target(y, X.shape[0])
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if min_samples_leaf < 1:
        raise ValueError("min_samples_leaf must be >= 1")
    cols = presort(X) if sorted_columns is None else sorted_columns
    if cols.order.shape != (X.shape[1], X.shape[0]):
        raise DataError("sorted_columns does not match X")
    arrays = _build(
        cols.order.copy(), cols.values.copy(), y, int(max_depth), int(min_samples_leaf)
    )
    return TreeArrays(*arrays, max_depth=int(max_depth))


def predict_tree(tree: TreeArrays, X) -> np.ndarray:
    X = np.atleast_2d(X)
    X = check_features(X, allow_empty=True)
    used = tree.used_features()
    if used and X.shape[1] <= max(used):
        raise DataError(f"rows have {X.shape[1]} features; tree splits on feature {max(used)}")
    return _predict_tree(
        X, tree.feature, tree.threshold, tree.default_left, tree.left, tree.right, tree.value
    )


class RegressionTree(RegressorMixin, BaseEstimator):
    """Single least-squares tree; NaN inputs are routed by learned defaults."""

    def __init__(self, max_depth=3, min_samples_leaf=1):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X, y):
        X = check_features(X)
        self.tree_ = fit_tree(X, y, self.max_depth, self.min_samples_leaf)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = check_features(X, self.n_features_in_)
        return predict_tree(self.tree_, X)


@dataclass(frozen=True)
class PackedTrees:
    """Trees concatenated into flat arrays; tree ``t`` owns nodes
    ``offsets[t]:offsets[t + 1]`` and child indices stay tree-local."""

    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_trees(cls, trees) -> "PackedTrees":
        trees = list(trees)
        sizes = [t.n_nodes for t in trees]
        offsets = np.zeros(len(trees) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(sizes)

        def cat(name, dtype):
            if not trees:
                return np.zeros(0, dtype=dtype)
            return np.ascontiguousarray(np.concatenate([getattr(t, name) for t in trees]), dtype=dtype)

        return cls(
            feature=cat("feature", np.int64),
            threshold=cat("threshold", np.float64),
            default_left=cat("default_left", np.bool_),
            left=cat("left", np.int64),
            right=cat("right", np.int64),
            value=cat("value", np.float64),
            cover=cat("cover", np.float64),
            offsets=offsets,
        )

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1


@njit(cache=True)
def _predict_packed(X, feature, threshold, default_left, left, right, value, offsets, weights, base, n_trees):
    # accumulate in tree order: identical to the running sum kept while fitting
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        acc = base
        for t in range(n_trees):
            node = _leaf_of(X[i], feature, threshold, default_left, left, right, offsets[t])
            acc += weights[t] * value[node]
        out[i] = acc
    return out


def predict_packed(packed: PackedTrees, X: np.ndarray, weights: np.ndarray, base: float, n_trees: int):
    if n_trees > packed.n_trees:
        raise ValueError(f"requested {n_trees} trees, ensemble has {packed.n_trees}")
    return _predict_packed(
        X,
        packed.feature,
        packed.threshold,
        packed.default_left,
        packed.left,
        packed.right,
        packed.value,
        packed.offsets,
        np.ascontiguousarray(weights, dtype=np.float64),
        float(base),
        int(n_trees),
    )

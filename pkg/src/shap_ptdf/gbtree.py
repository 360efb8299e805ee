"""Per-line regressors: squared-error gradient-boosted trees and OLS.

Both estimators follow the scikit-learn API (``fit``/``predict``,
``get_params``) so they drop into pipelines and model-selection tools.

Split semantics are strict: a row goes left when ``x[feature] < threshold``.
The SHAP engines rely on the same convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DataError, ModelFormatError, ModelVersionError, NumericalError
from .linalg import lstsq_qr
from .scenarios import Dataset, atomic_write_text

MODEL_MAGIC = "SHAPPTDF-MODEL"
MODEL_VERSION = 1


@dataclass
class TrainConfig:
    """Boosting hyperparameters.

    The defaults fit additive stumps: the DC flow targets are exactly linear
    (hence additive) in the injections, and deeper trees spend their splits on
    spurious interactions that raise test error.
    """

    n_trees: int = 4000
    max_depth: int = 1
    learning_rate: float = 1.0
    min_samples_leaf: int = 5
    loss: str = "squared_error"

    def __post_init__(self):
        if self.n_trees < 1:
            raise DataError("n_trees must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise DataError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise DataError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise DataError("min_samples_leaf must be >= 1")
        if self.loss != "squared_error":
            raise DataError(f"unsupported loss {self.loss!r}")


class Tree:
    """A binary regression tree stored as parallel node arrays.

    Node 0 is the root.  Leaves have ``feature == -1`` and carry ``value``;
    internal nodes route ``x[feature] < threshold`` to ``left``.  ``cover``
    is the number of training rows that reached the node.
    """

    def __init__(self, feature, threshold, left, right, value, cover):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.cover = np.asarray(cover, dtype=np.int64)

    @property
    def n_nodes(self):
        return self.feature.size

    def is_leaf(self, node):
        return self.feature[node] < 0

    def validate(self):
        """Check array shapes, child links and cover bookkeeping."""
        n = self.n_nodes
        arrays = (self.threshold, self.left, self.right, self.value, self.cover)
        if n == 0 or any(a.shape != (n,) for a in arrays):
            raise ModelFormatError("tree arrays are empty or have inconsistent lengths")
        if np.any(self.cover < 1):
            raise ModelFormatError("every node must have cover >= 1")
        if not np.all(np.isfinite(self.value)) or not np.all(np.isfinite(self.threshold)):
            raise ModelFormatError("non-finite tree value or threshold")
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        while stack:
            node = stack.pop()
            if seen[node]:
                raise ModelFormatError("tree has a cycle or shared child")
            seen[node] = True
            if self.feature[node] >= 0:
                lo, hi = self.left[node], self.right[node]
                if not (0 < lo < n and 0 < hi < n):
                    raise ModelFormatError(f"node {node}: child index out of range")
                if self.cover[node] != self.cover[lo] + self.cover[hi]:
                    raise ModelFormatError(f"node {node}: cover != cover(left) + cover(right)")
                stack += [hi, lo]
        if not seen.all():
            raise ModelFormatError("tree has unreachable nodes")

    def apply(self, X):
        """Leaf index reached by each row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.nonzero(self.feature[node] >= 0)[0]
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] < self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X):
        return self.value[self.apply(X)]

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"], d["cover"])

    @classmethod
    def leaf(cls, value, cover):
        return cls([-1], [0.0], [-1], [-1], [value], [cover])

    @classmethod
    def stump(cls, feature, threshold, left_value, right_value, left_cover, right_cover):
        return cls(
            [feature, -1, -1], [threshold, 0.0, 0.0], [1, -1, -1], [2, -1, -1],
            [0.0, left_value, right_value], [left_cover + right_cover, left_cover, right_cover],
        )


def _best_split(X, r, rows, min_leaf):
    """Exact greedy split maximising the squared-error reduction.

    Ties go to the lowest feature index, then the smallest threshold.
    """
    n = rows.size
    if n < 2 * min_leaf:
        return None
    rr = r[rows]
    total = rr.sum()
    parent = total * total / n
    best_gain, best = 0.0, None
    cut = np.arange(min_leaf - 1, n - min_leaf)
    for j in range(X.shape[1]):
        xj = X[rows, j]
        order = np.argsort(xj, kind="stable")
        xs = xj[order]
        csum = np.cumsum(rr[order])
        i = cut[xs[cut] < xs[cut + 1]]
        if i.size == 0:
            continue
        nl = i + 1.0
        sl = csum[i]
        sr = total - sl
        gain = sl * sl / nl + sr * sr / (n - nl) - parent
        pos = int(np.argmax(gain))
        if gain[pos] > best_gain:
            lo, hi = xs[i[pos]], xs[i[pos] + 1]
            thr = 0.5 * (lo + hi)
            if not lo < thr <= hi:
                thr = hi
            best_gain, best = gain[pos], (j, thr)
    return best


def _grow_tree(X, r, max_depth, min_leaf, learning_rate):
    feature, threshold, left, right, value, cover = [], [], [], [], [], []
    leaf_rows = []

    def new_node():
        for a in (feature, threshold, left, right, value, cover):
            a.append(0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        cover[node] = rows.size
        found = _best_split(X, r, rows, min_leaf) if depth < max_depth else None
        if found is None:
            feature[node], threshold[node], left[node], right[node] = -1, 0.0, -1, -1
            value[node] = learning_rate * float(r[rows].mean())
            leaf_rows.append((node, rows))
            continue
        j, thr = found
        mask = X[rows, j] < thr
        lnode, rnode = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = j, thr, lnode, rnode
        value[node] = 0.0
        # right pushed first so the left subtree is numbered first
        stack.append((rnode, rows[~mask], depth + 1))
        stack.append((lnode, rows[mask], depth + 1))
    tree = Tree(feature, threshold, left, right, value, cover)
    fitted = np.empty(X.shape[0])
    for node, rows in leaf_rows:
        fitted[rows] = tree.value[node]
    return tree, fitted


class GradientBoostedTreesRegressor(RegressorMixin, BaseEstimator):
    """Squared-error gradient boosting of exact-greedy regression trees.

    The initial prediction is the target mean; each tree fits the current
    residuals and its leaves store ``learning_rate * mean residual``.  No row
    or column subsampling is used, so fitting is deterministic.

    Parameters
    ----------
    n_trees : int
        Number of boosting stages.
    max_depth : int
        Maximum depth of each tree.
    learning_rate : float
        Shrinkage applied to every leaf value, in (0, 1].
    min_samples_leaf : int
        Minimum training rows in each leaf.
    """

    def __init__(self, n_trees=4000, max_depth=1, learning_rate=1.0, min_samples_leaf=5):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X, y, feature_names=None):
        cfg = TrainConfig(self.n_trees, self.max_depth, self.learning_rate, self.min_samples_leaf)
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[0] < 2 * cfg.min_samples_leaf:
            raise DataError(
                f"need at least {2 * cfg.min_samples_leaf} rows, got {X.shape[0]}"
            )
        self.n_features_in_ = X.shape[1]
        self.feature_names_ = _feature_names(feature_names, X.shape[1])
        self.base_score_ = float(y.mean())
        pred = np.full(y.shape, self.base_score_)
        self.trees_ = []
        for _ in range(cfg.n_trees):
            tree, fitted = _grow_tree(X, y - pred, cfg.max_depth, cfg.min_samples_leaf,
                                      cfg.learning_rate)
            self.trees_.append(tree)
            pred += fitted
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = _check_predict_input(self, X)
        out = np.full(X.shape[0], self.base_score_)
        for tree in self.trees_:
            out += tree.predict(X)
        return out


class LinearLeastSquaresRegressor(RegressorMixin, BaseEstimator):
    """Ordinary least squares ``f(x) = coef_ @ x + intercept_``.

    ``feature_means_`` stores the training-set feature means used as the
    SHAP reference point.
    """

    def fit(self, X, y, feature_names=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        self.feature_names_ = _feature_names(feature_names, X.shape[1])
        _reject_constant_columns(X, self.feature_names_)
        design = np.column_stack([X, np.ones(X.shape[0])])
        coef = lstsq_qr(design, y, self.feature_names_ + ["intercept"])
        self.coef_ = coef[:-1]
        self.intercept_ = float(coef[-1])
        self.feature_means_ = X.mean(axis=0)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = _check_predict_input(self, X)
        return X @ self.coef_ + self.intercept_


def _feature_names(names, k):
    if names is None:
        return [f"x{i}" for i in range(k)]
    names = list(names)
    if len(names) != k:
        raise DataError(f"{len(names)} feature names for {k} features")
    return names


def _reject_constant_columns(X, names):
    for j, name in enumerate(names):
        if X.shape[0] and np.all(X[:, j] == X[0, j]):
            raise NumericalError(f"design matrix is rank deficient: column {name!r} is constant")


def _check_predict_input(model, X):
    X = check_array(np.atleast_2d(np.asarray(X, dtype=float)), dtype=np.float64)
    if X.shape[1] != model.n_features_in_:
        raise DataError(f"expected {model.n_features_in_} features, got {X.shape[1]}")
    return X


def fit_gbt(train: Dataset, target: str, cfg: TrainConfig | None = None):
    """Fit a boosted-tree model for branch-flow column ``target`` (e.g. ``"F4-5"``)."""
    cfg = cfg or TrainConfig()
    model = GradientBoostedTreesRegressor(
        cfg.n_trees, cfg.max_depth, cfg.learning_rate, cfg.min_samples_leaf
    )
    model.target_ = target
    return model.fit(train.X, train.target(target), feature_names=train.feature_names)


def fit_linear(train: Dataset, target: str):
    model = LinearLeastSquaresRegressor()
    model.target_ = target
    return model.fit(train.X, train.target(target), feature_names=train.feature_names)


def predict(model, x):
    """Prediction for one injection vector (scalar) or a matrix of rows (array)."""
    x = np.asarray(x, dtype=float)
    out = model.predict(np.atleast_2d(x))
    return float(out[0]) if x.ndim == 1 else out


def model_to_text(model) -> str:
    """Serialise a fitted model: header line then canonical JSON body."""
    if isinstance(model, GradientBoostedTreesRegressor):
        check_is_fitted(model, "trees_")
        body = {
            "kind": "gbt",
            "params": model.get_params(),
            "base_score": model.base_score_,
            "trees": [t.to_dict() for t in model.trees_],
        }
    elif isinstance(model, LinearLeastSquaresRegressor):
        check_is_fitted(model, "coef_")
        body = {
            "kind": "linear",
            "coef": model.coef_.tolist(),
            "intercept": model.intercept_,
            "feature_means": model.feature_means_.tolist(),
        }
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    body["feature_names"] = list(model.feature_names_)
    body["target"] = getattr(model, "target_", None)
    return f"{MODEL_MAGIC} {MODEL_VERSION}\n" + json.dumps(body, sort_keys=True) + "\n"


def model_from_text(text: str):
    header, _, payload = text.partition("\n")
    parts = header.split()
    if len(parts) != 2 or parts[0] != MODEL_MAGIC:
        raise ModelFormatError("not a model file (bad header)")
    try:
        version = int(parts[1])
    except ValueError:
        raise ModelFormatError("bad version field") from None
    if version != MODEL_VERSION:
        raise ModelVersionError(f"model format version {version}, expected {MODEL_VERSION}")
    try:
        body = json.loads(payload)
        names = list(body["feature_names"])
        if body["kind"] == "gbt":
            model = GradientBoostedTreesRegressor(**body["params"])
            model.base_score_ = float(body["base_score"])
            model.trees_ = [Tree.from_dict(t) for t in body["trees"]]
            for tree in model.trees_:
                tree.validate()
                if np.any(tree.feature >= len(names)):
                    raise ModelFormatError("tree references an unknown feature")
        elif body["kind"] == "linear":
            model = LinearLeastSquaresRegressor()
            model.coef_ = np.array(body["coef"], dtype=float)
            model.intercept_ = float(body["intercept"])
            model.feature_means_ = np.array(body["feature_means"], dtype=float)
            if model.coef_.shape != (len(names),) or model.feature_means_.shape != (len(names),):
                raise ModelFormatError("linear model arrays do not match feature count")
        else:
            raise ModelFormatError(f"unknown model kind {body['kind']!r}")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"corrupt model file: {exc}") from None
    model.feature_names_ = names
    model.n_features_in_ = len(names)
    if body.get("target") is not None:
        model.target_ = body["target"]
    return model


def save_model(model, path) -> None:
    atomic_write_text(path, model_to_text(model))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_text(fh.read())


__all__ = [
    "GradientBoostedTreesRegressor",
    "LinearLeastSquaresRegressor",
    "TrainConfig",
    "Tree",
    "fit_gbt",
    "fit_linear",
    "load_model",
    "predict",
    "save_model",
]

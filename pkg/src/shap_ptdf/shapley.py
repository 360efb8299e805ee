"""Interventional SHAP values: closed-form linear, brute-force, and tree-path.

All engines use the interventional coalition value

    v(S) = mean over background rows z of f(x_S, z_{not S})

and report ``base_value = v(empty) = E[f(Z)]`` so that
``base_value + sum(phis) == f(x)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DataError
from .gbtree import GradientBoostedTreesRegressor, LinearLeastSquaresRegressor, Tree
from .scenarios import STREAM_BACKGROUND, Dataset, atomic_write_text, seeded_permutation

MAX_EXACT_FEATURES = 20


@dataclass
class Explanation:
    base_value: float
    phis: np.ndarray
    fx: float
    feature_values: np.ndarray
    feature_names: list[str]

    @property
    def local_accuracy_error(self) -> float:
        return abs(self.base_value + float(np.sum(self.phis)) - self.fx)

    def waterfall(self):
        """``(name, value, phi)`` triples ordered by decreasing ``|phi|``."""
        order = sorted(range(len(self.phis)), key=lambda i: (-abs(self.phis[i]), i))
        return [(self.feature_names[i], float(self.feature_values[i]), float(self.phis[i]))
                for i in order]


@dataclass
class BackgroundSet:
    rows: np.ndarray
    feature_names: list[str] | None = None

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if rows.shape[0] == 0:
            raise DataError("background set is empty")
        self.rows = check_array(rows)

    @property
    def means(self) -> np.ndarray:
        return self.rows.mean(axis=0)

    def __len__(self):
        return self.rows.shape[0]

    @classmethod
    def from_dataset(cls, ds: Dataset, size: int | None = None, seed: int = 0):
        """All rows of ``ds``, or a seeded subsample of ``size`` rows in original order."""
        if size is None or size >= len(ds):
            return cls(ds.X.copy(), ds.feature_names)
        if size < 1:
            raise DataError("background size must be >= 1")
        keep = np.sort(seeded_permutation(seed, len(ds), STREAM_BACKGROUND)[:size])
        return cls(ds.X[keep], ds.feature_names)


@dataclass
class ExplanationSet:
    explanations: list[Explanation]
    model_id: str = ""
    background_id: str = ""
    feature_names: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.explanations)

    def __iter__(self):
        return iter(self.explanations)

    def __getitem__(self, i):
        return self.explanations[i]

    @property
    def phis(self) -> np.ndarray:
        k = len(self.feature_names)
        return np.array([e.phis for e in self.explanations], dtype=float).reshape(-1, k)

    @property
    def feature_values(self) -> np.ndarray:
        k = len(self.feature_names)
        return np.array([e.feature_values for e in self.explanations], dtype=float).reshape(-1, k)

    @property
    def base_values(self) -> np.ndarray:
        return np.array([e.base_value for e in self.explanations], dtype=float)

    @property
    def fx(self) -> np.ndarray:
        return np.array([e.fx for e in self.explanations], dtype=float)


def _predict_fn(model):
    if hasattr(model, "predict"):
        return lambda X: np.asarray(model.predict(X), dtype=float)
    if callable(model):
        return lambda X: np.asarray(model(X), dtype=float)
    raise TypeError("model must define predict() or be callable")


def _names(model, k):
    names = getattr(model, "feature_names_", None)
    return list(names) if names is not None and len(names) == k else [f"x{i}" for i in range(k)]


def _as_row(x, k=None):
    x = np.asarray(x, dtype=float).reshape(-1)
    if k is not None and x.size != k:
        raise DataError(f"expected {k} features, got {x.size}")
    return x


# --- closed form for linear models -------------------------------------------------------

def shap_linear(m: LinearLeastSquaresRegressor, x) -> Explanation:
    """``phi_i = w_i (x_i - E[X_i])`` with ``base_value = w @ E[X] + b``."""
    check_is_fitted(m, "coef_")
    phis, base, fx = _linear_batch(m, np.atleast_2d(_as_row(x, m.coef_.size)))
    return Explanation(float(base), phis[0], float(fx[0]), _as_row(x), _names(m, m.coef_.size))


def _linear_batch(m, X):
    means = np.asarray(m.feature_means_, dtype=float)
    phis = m.coef_ * (X - means)
    base = float(m.coef_ @ means + m.intercept_)
    return phis, base, X @ m.coef_ + m.intercept_


def shap_derivative(m: LinearLeastSquaresRegressor, x, i, h: float = 1.0) -> float:
    """Finite-difference slope of ``phi_i`` along feature ``i`` (index or name)."""
    if h == 0:
        raise DataError("step h must be non-zero")
    if isinstance(i, str):
        i = list(m.feature_names_).index(i)
    x = _as_row(x, m.coef_.size)
    xh = x.copy()
    xh[i] += h
    return float((shap_linear(m, xh).phis[i] - shap_linear(m, x).phis[i]) / h)


# --- brute-force coalition enumeration --------------------------------------------------

def _shapley_weights(M):
    fact = math.factorial
    return np.array([fact(s) * fact(M - s - 1) / fact(M) for s in range(M)])


def shap_exact(model, x, bg: BackgroundSet) -> Explanation:
    """Interventional Shapley values by enumerating all ``2**M`` coalitions."""
    Z = bg.rows
    M = Z.shape[1]
    if M > MAX_EXACT_FEATURES:
        raise DataError(f"exact enumeration refused for M={M} > {MAX_EXACT_FEATURES} features")
    x = _as_row(x, M)
    f = _predict_fn(model)
    v = np.empty(1 << M)
    for S in range(1 << M):
        hybrid = Z.copy()
        cols = [j for j in range(M) if S >> j & 1]
        hybrid[:, cols] = x[cols]
        v[S] = f(hybrid).mean()
    w = _shapley_weights(M)
    phis = np.zeros(M)
    for i in range(M):
        bit = 1 << i
        for S in range(1 << M):
            if not S & bit:
                phis[i] += w[bin(S).count("1")] * (v[S | bit] - v[S])
    fx = float(f(x[None, :])[0])
    return Explanation(float(v[0]), phis, fx, x, _names(model, M))


# --- tree-path algorithm ----------------------------------------------------------------

def _leaf_paths(tree: Tree):
    """Yield ``(value, features, lo, hi)`` per leaf; the leaf is reached iff
    ``lo[t] <= x[features[t]] < hi[t]`` for every path feature ``t``."""
    cached = getattr(tree, "_leaf_paths", None)
    if cached is not None:
        return cached
    out = []
    stack = [(0, {})]
    while stack:
        node, box = stack.pop()
        j = int(tree.feature[node])
        if j < 0:
            feats = sorted(box)
            out.append((
                float(tree.value[node]),
                np.array(feats, dtype=np.int64),
                np.array([box[f][0] for f in feats]),
                np.array([box[f][1] for f in feats]),
            ))
            continue
        thr = float(tree.threshold[node])
        lo, hi = box.get(j, (-np.inf, np.inf))
        left, right = dict(box), dict(box)
        left[j] = (lo, min(hi, thr))
        right[j] = (max(lo, thr), hi)
        stack.append((int(tree.right[node]), right))
        stack.append((int(tree.left[node]), left))
    tree._leaf_paths = out
    return out


def _pattern_table(value, p, M, feats, z_freq):
    """SHAP contribution of one leaf for every x-pattern, averaged over z-patterns.

    Bit ``t`` of a pattern says whether path feature ``t`` lies in its interval.
    For a given (x, z) pair the leaf is reached by the hybrid point iff every
    feature in A (only x inside) is taken from x and every feature in B (only
    z inside) from z; the Shapley values of that game are
    ``v (a-1)! b! / (a+b)!`` for members of A and ``-v a! (b-1)! / (a+b)!``
    for members of B.
    """
    fact = math.factorial
    table = np.zeros((1 << p, M))
    for xp in range(1 << p):
        for zp in np.nonzero(z_freq)[0]:
            if (xp | zp) != (1 << p) - 1:
                continue  # some feature lies outside the interval for both rows
            a_set = [t for t in range(p) if xp >> t & 1 and not zp >> t & 1]
            b_set = [t for t in range(p) if zp >> t & 1 and not xp >> t & 1]
            a, b = len(a_set), len(b_set)
            if a + b == 0:
                continue
            scale = z_freq[zp] * value / fact(a + b)
            if a:
                wa = scale * fact(a - 1) * fact(b)
                for t in a_set:
                    table[xp, feats[t]] += wa
            if b:
                wb = scale * fact(a) * fact(b - 1)
                for t in b_set:
                    table[xp, feats[t]] -= wb
    return table


def _tree_shap_batch(tree: Tree, X, Z):
    """Mean interventional SHAP values of one tree, one row per ``X`` row."""
    n, M = X.shape
    phis = np.zeros((n, M))
    for value, feats, lo, hi in _leaf_paths(tree):
        p = feats.size
        if p == 0 or value == 0.0:
            continue
        weights = 1 << np.arange(p)
        x_in = (X[:, feats] >= lo) & (X[:, feats] < hi)
        z_in = (Z[:, feats] >= lo) & (Z[:, feats] < hi)
        z_freq = np.bincount(z_in @ weights, minlength=1 << p) / Z.shape[0]
        table = _pattern_table(value, p, M, feats, z_freq)
        phis += table[x_in @ weights]
    return phis


def _check_ensemble(m):
    check_is_fitted(m, "trees_")
    for tree in m.trees_:
        tree.validate()


def _tree_batch(m: GradientBoostedTreesRegressor, X, Z):
    phis = np.zeros(X.shape)
    for tree in m.trees_:
        phis += _tree_shap_batch(tree, X, Z)
    return phis, float(m.predict(Z).mean()), m.predict(X)


def shap_tree(m: GradientBoostedTreesRegressor, x, bg: BackgroundSet) -> Explanation:
    """Interventional Tree SHAP by root-to-leaf path enumeration.

    Cost per tree is linear in the number of leaves times
    ``len(x) + len(bg)``, which makes explaining whole datasets cheap.
    """
    _check_ensemble(m)
    x = _as_row(x, m.n_features_in_)
    if bg.rows.shape[1] != x.size:
        raise DataError("background and input dimensions differ")
    phis, base, fx = _tree_batch(m, x[None, :], bg.rows)
    return Explanation(base, phis[0], float(fx[0]), x, _names(m, x.size))


# --- datasets and global summaries ------------------------------------------------------

def explain_dataset(model, ds: Dataset, bg: BackgroundSet, method: str = "auto",
                    model_id: str = "", background_id: str = "") -> ExplanationSet:
    """Explain every row of ``ds`` in order.

    ``method`` is ``"tree"``, ``"linear"``, ``"exact"`` or ``"auto"`` (tree for
    boosted ensembles, closed form for linear models, enumeration otherwise).
    """
    X = np.asarray(ds.X, dtype=float)
    names = list(ds.feature_names)
    if method == "auto":
        if isinstance(model, GradientBoostedTreesRegressor):
            method = "tree"
        elif isinstance(model, LinearLeastSquaresRegressor):
            method = "linear"
        else:
            method = "exact"
    if X.shape[0] == 0:
        return ExplanationSet([], model_id, background_id, names)
    if X.shape[1] != bg.rows.shape[1]:
        raise DataError("dataset and background dimensions differ")
    if method == "tree":
        _check_ensemble(model)
        phis, base, fx = _tree_batch(model, X, bg.rows)
        expl = [Explanation(base, phis[r], float(fx[r]), X[r], names) for r in range(X.shape[0])]
    elif method == "linear":
        check_is_fitted(model, "coef_")
        phis, base, fx = _linear_batch(model, X)
        expl = [Explanation(base, phis[r], float(fx[r]), X[r], names) for r in range(X.shape[0])]
    elif method == "exact":
        expl = []
        for r in range(X.shape[0]):
            e = shap_exact(model, X[r], bg)
            e.feature_names = names
            expl.append(e)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ExplanationSet(expl, model_id, background_id, names)


def feature_importance(es: ExplanationSet) -> list[tuple[str, float]]:
    """Mean ``|phi|`` per feature, descending; ties keep feature order."""
    if len(es) == 0:
        raise DataError("cannot rank features of an empty explanation set")
    imp = np.abs(es.phis).mean(axis=0)
    order = sorted(range(imp.size), key=lambda i: (-imp[i], i))
    return [(es.feature_names[i], float(imp[i])) for i in order]


# --- sklearn-style explainers -----------------------------------------------------------

class _BaseExplainer(TransformerMixin, BaseEstimator):
    """Fit on background rows; ``transform`` maps inputs to SHAP values."""

    def __init__(self, model):
        self.model = model

    def fit(self, X, y=None):
        self.background_ = BackgroundSet(X)
        self.n_features_in_ = self.background_.rows.shape[1]
        return self

    def explain(self, X) -> ExplanationSet:
        check_is_fitted(self, "background_")
        X = check_array(np.atleast_2d(X))
        names = _names(self.model, X.shape[1])
        ds = Dataset(X, np.zeros((X.shape[0], 0)), names, [])
        return explain_dataset(self.model, ds, self.background_, self._method)

    def transform(self, X):
        return self.explain(X).phis

    @property
    def expected_value_(self):
        check_is_fitted(self, "background_")
        return float(_predict_fn(self.model)(self.background_.rows).mean())


class TreeExplainer(_BaseExplainer):
    _method = "tree"


class ExactExplainer(_BaseExplainer):
    _method = "exact"


class LinearExplainer(_BaseExplainer):
    """Closed-form explainer; uses the model's stored training means."""

    _method = "linear"

    def fit(self, X=None, y=None):
        check_is_fitted(self.model, "coef_")
        rows = self.model.feature_means_[None, :] if X is None else X
        return super().fit(rows)

    @property
    def expected_value_(self):
        return float(_linear_batch(self.model, self.model.feature_means_[None, :])[1])


# --- persistence ------------------------------------------------------------------------

def format_explanations(es: ExplanationSet, rows=None, with_error: bool = True) -> str:
    """CSV ``row,<features>,fx,base,phi_<features>[,local_err]``."""
    names = es.feature_names
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["row", *names, "fx", "base", *[f"phi_{n}" for n in names]]
    writer.writerow(header + (["local_err"] if with_error else []))
    rows = range(len(es)) if rows is None else rows
    for r, e in zip(rows, es):
        cells = [str(int(r)), *[repr(float(v)) for v in e.feature_values],
                 repr(float(e.fx)), repr(float(e.base_value)), *[repr(float(p)) for p in e.phis]]
        if with_error:
            cells.append(f"{e.local_accuracy_error:.3e}")
        writer.writerow(cells)
    return buf.getvalue()


def write_explanations(es: ExplanationSet, path, rows=None) -> None:
    atomic_write_text(path, format_explanations(es, rows))


def read_explanations(path) -> tuple[np.ndarray, ExplanationSet]:
    """Inverse of :func:`write_explanations`; returns ``(row_ids, explanations)``."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty explanation file")
    header = rows[0]
    if header[-1] == "local_err":
        header = header[:-1]
    k = (len(header) - 3) // 2
    names = header[1:1 + k]
    expected = ["row", *names, "fx", "base", *[f"phi_{n}" for n in names]]
    if header != expected:
        raise DataError(f"{path}: header mismatch")
    ids, expl = [], []
    for row in rows[1:]:
        vals = [float(c) for c in row[:len(header)]]
        ids.append(int(vals[0]))
        expl.append(Explanation(vals[k + 2], np.array(vals[k + 3:2 * k + 3]), vals[k + 1],
                                np.array(vals[1:k + 1]), names))
    return np.array(ids, dtype=int), ExplanationSet(expl, feature_names=names)

"""Random-forest classifier and regressor built on a small CART implementation.

Split search is exhaustive over the candidate features of a node. Ties in
impurity go to the lowest feature index, then the lowest threshold, so a
forest is fully determined by its seed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DataError, DimensionMismatchError

CLASSIFICATION = "classification"
REGRESSION = "regression"


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    features_per_split: str | int | float = "auto"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0 or None")


def _n_candidates(rule, n_features: int, task: str) -> int:
    if rule == "auto":
        rule = "sqrt" if task == CLASSIFICATION else "third"
    if rule == "sqrt":
        k = int(math.sqrt(n_features))
    elif rule == "third":
        k = n_features // 3
    elif rule in ("all", None):
        k = n_features
    elif isinstance(rule, float):
        k = int(rule * n_features)
    else:
        k = int(rule)
    return min(max(k, 1), n_features)


class _Tree:
    """Array-backed binary tree; leaves carry a class distribution or a mean."""

    def __init__(self, task, n_classes, max_depth, min_samples_split, n_candidates, rng):
        self.task = task
        self.n_classes = n_classes
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.n_candidates = n_candidates
        self.rng = rng

    def _leaf_value(self, y):
        if self.task == CLASSIFICATION:
            return np.bincount(y, minlength=self.n_classes) / len(y)
        return np.array([y.mean()])

    def _impurity(self, y):
        if self.task == CLASSIFICATION:
            p = np.bincount(y, minlength=self.n_classes) / len(y)
            return 1.0 - np.sum(p * p)
        return float(np.var(y))

    def _best_split_on(self, xf, y):
        """Lowest weighted child impurity over thresholds of one feature, or None."""
        order = np.argsort(xf, kind="stable")
        xs, ys = xf[order], y[order]
        valid = np.nonzero(xs[1:] > xs[:-1])[0]
        if len(valid) == 0:
            return None
        n = len(y)
        n_left = np.arange(1, n)
        if self.task == CLASSIFICATION:
            onehot = np.zeros((n, self.n_classes))
            onehot[np.arange(n), ys] = 1.0
            left = np.cumsum(onehot, axis=0)[:-1]
            right = left[-1] + onehot[-1] - left
            gl = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
            gr = 1.0 - np.sum((right / (n - n_left)[:, None]) ** 2, axis=1)
        else:
            c1 = np.cumsum(ys)[:-1]
            c2 = np.cumsum(ys * ys)[:-1]
            t1, t2 = c1[-1] + ys[-1], c2[-1] + ys[-1] ** 2
            gl = np.maximum(c2 / n_left - (c1 / n_left) ** 2, 0.0)
            nr = n - n_left
            gr = np.maximum((t2 - c2) / nr - ((t1 - c1) / nr) ** 2, 0.0)
        cost = (n_left * gl + (n - n_left) * gr) / n
        cost = cost[valid]
        best = int(np.argmin(cost))
        pos = valid[best]
        return cost[best], 0.5 * (xs[pos] + xs[pos + 1])

    def fit(self, X, y):
        n_features = X.shape[1]
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node():
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(None)
            return len(feature) - 1

        root = new_node()
        stack = [(root, np.arange(len(y)), 0)]
        while stack:
            node, idx, depth = stack.pop()
            yn = y[idx]
            value[node] = self._leaf_value(yn)
            impurity = self._impurity(yn)
            if (
                impurity <= 0.0
                or len(idx) < self.min_samples_split
                or (self.max_depth is not None and depth >= self.max_depth)
            ):
                continue
            perm = self.rng.permutation(n_features)
            candidates = np.sort(perm[: self.n_candidates])
            best = None
            for group in (candidates, np.sort(perm[self.n_candidates:])):
                for f in group:
                    res = self._best_split_on(X[idx, f], yn)
                    if res is not None and (best is None or res[0] < best[0]
                                            or (res[0] == best[0] and f < best[1])):
                        best = (res[0], f, res[1])
                if best is not None:
                    break
            if best is None:
                continue
            _, f, thr = best
            mask = X[idx, f] <= thr
            feature[node], threshold[node] = int(f), float(thr)
            lnode, rnode = new_node(), new_node()
            left[node], right[node] = lnode, rnode
            # right pushed first so the left subtree is built (and draws features) first
            stack.append((rnode, idx[~mask], depth + 1))
            stack.append((lnode, idx[mask], depth + 1))

        self.feature = np.array(feature)
        self.threshold = np.array(threshold)
        self.left = np.array(left)
        self.right = np.array(right)
        self.value = np.vstack(value)
        return self

    def apply(self, X):
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] >= 0
        while np.any(active):
            rows = np.nonzero(active)[0]
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict_value(self, X):
        return self.value[self.apply(X)]


def _n_jobs() -> int:
    try:
        return max(1, int(os.environ.get("SYNRL_THREADS", "1")))
    except ValueError:
        return 1


class _BaseForest(BaseEstimator):
    task = None

    def __init__(self, n_estimators=100, max_depth=None, min_samples_split=2,
                 max_features="auto", bootstrap=True, random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state

    @classmethod
    def from_config(cls, config: ForestConfig):
        return cls(config.n_trees, config.max_depth, config.min_samples_split,
                   config.features_per_split, config.bootstrap, config.seed)

    def _prepare_y(self, y):
        return np.asarray(y, dtype=np.float64), 0

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or len(X) == 0:
            raise DataError("forest needs a non-empty 2-D feature matrix")
        if len(X) != len(y):
            raise DimensionMismatchError("features and labels differ in length")
        if self.n_estimators < 1:
            raise ConfigError("n_estimators must be >= 1")
        y_enc, n_classes = self._prepare_y(y)
        self.n_features_in_ = X.shape[1]
        n_cand = _n_candidates(self.max_features, X.shape[1], self.task)
        seeds = np.random.SeedSequence(int(self.random_state)).spawn(int(self.n_estimators))

        def build(ss):
            rng = np.random.default_rng(ss)
            if self.bootstrap:
                rows = rng.integers(0, len(X), len(X))
            else:
                rows = np.arange(len(X))
            tree = _Tree(self.task, n_classes, self.max_depth, self.min_samples_split, n_cand, rng)
            return tree.fit(X[rows], y_enc[rows])

        jobs = _n_jobs()
        if jobs > 1:
            self.estimators_ = Parallel(n_jobs=jobs)(delayed(build)(ss) for ss in seeds)
        else:
            self.estimators_ = [build(ss) for ss in seeds]
        return self

    def _check_X(self, X):
        check_is_fitted(self, "estimators_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(f"expected {self.n_features_in_} features, got shape {X.shape}")
        return X

    def _mean_value(self, X):
        X = self._check_X(X)
        total = np.zeros((len(X), self.estimators_[0].value.shape[1]))
        for tree in self.estimators_:
            total += tree.predict_value(X)
        return total / len(self.estimators_)


class RandomForestClassifier(ClassifierMixin, _BaseForest):
    task = CLASSIFICATION

    def _prepare_y(self, y):
        self.classes_, y_enc = np.unique(np.asarray(y), return_inverse=True)
        return y_enc.astype(int), len(self.classes_)

    def predict_proba(self, X):
        proba = self._mean_value(X)
        return proba / proba.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class RandomForestRegressor(RegressorMixin, _BaseForest):
    task = REGRESSION

    def predict(self, X):
        return self._mean_value(X)[:, 0]


def fit_forest(features, labels, config: ForestConfig = ForestConfig(), task: str = CLASSIFICATION):
    cls = RandomForestClassifier if task == CLASSIFICATION else RandomForestRegressor
    return cls.from_config(config).fit(features, labels)



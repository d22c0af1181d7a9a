"""Data Shapley values of synthetic training records.

``knn_shapley`` is the closed-form recursion for the K-nearest-neighbour
utility; ``exact_shapley`` enumerates subsets and serves as its oracle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from math import comb
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Dataset, TabularEncoder
from .exceptions import ConfigError, DataError, DimensionMismatchError, SchemaError

MAX_EXACT_N = 12


@dataclass(frozen=True)
class ValuationConfig:
    k_neighbors: int = 5
    distance: str = "euclidean"
    continuous_target_bins: int = 2

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")
        if self.continuous_target_bins < 2:
            raise ConfigError("continuous_target_bins must be >= 2")
        if self.distance != "euclidean":
            raise ConfigError(f"unsupported distance {self.distance!r}")


@dataclass(frozen=True)
class ValuationResult:
    scores: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)):
            raise DataError("non-finite Shapley score")

    def __len__(self):
        return len(self.scores)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_index", "shapley_score"])
            for i, s in enumerate(self.scores):
                w.writerow([i, repr(float(s))])


@dataclass(frozen=True)
class LabeledView:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise DimensionMismatchError("features and labels must have matching row counts")

    def __len__(self):
        return len(self.labels)


def bin_continuous_target(real_labels, syn_labels, bins: int = 2):
    """Quantile-bin both label sets using boundaries taken from the real labels.

    Values outside the real range fall into the first or last bin.
    """
    if bins < 2:
        raise ConfigError("bins must be >= 2")
    real = np.asarray(real_labels, dtype=np.float64)
    syn = np.asarray(syn_labels, dtype=np.float64)
    if np.all(real == real[0]):
        raise DataError("cannot bin a constant real target")
    inner = np.quantile(real, np.linspace(0.0, 1.0, bins + 1)[1:-1])

    def _bin(v):
        return np.searchsorted(inner, v, side="right").astype(int)

    return _bin(real), _bin(syn)


def labeled_views(
    encoder: TabularEncoder, train: Dataset, test: Dataset, config: ValuationConfig = ValuationConfig()
) -> tuple[LabeledView, LabeledView]:
    """Build (synthetic-train, real-test) views; the target column is dropped from the features."""
    target = encoder.schema_.target
    if target is None:
        raise SchemaError("valuation needs a schema with a target column")
    dims = encoder.column_dims(exclude=[target.name])
    j = encoder.schema_.index(target.name)
    y_train, y_test = train.values[:, j], test.values[:, j]
    if target.is_categorical:
        y_train, y_test = y_train.astype(int), y_test.astype(int)
    else:
        y_test, y_train = bin_continuous_target(y_test, y_train, config.continuous_target_bins)
    return (
        LabeledView(encoder.transform(train)[:, dims], y_train),
        LabeledView(encoder.transform(test)[:, dims], y_test),
    )


def _neighbour_order(train: LabeledView, test: LabeledView) -> np.ndarray:
    """Per test point, train indices by ascending distance; ties go to the lower index."""
    d2 = (
        np.sum(test.features**2, axis=1)[:, None]
        + np.sum(train.features**2, axis=1)[None, :]
        - 2.0 * test.features @ train.features.T
    )
    np.maximum(d2, 0.0, out=d2)
    return np.argsort(d2, axis=1, kind="stable")


def _check_views(train: LabeledView, test: LabeledView):
    if len(train) == 0 or len(test) == 0:
        raise DataError("valuation needs non-empty train and test views")
    if train.features.shape[1] != test.features.shape[1]:
        raise DimensionMismatchError(
            f"feature width mismatch: train {train.features.shape[1]}, test {test.features.shape[1]}"
        )


def knn_shapley(train: LabeledView, test: LabeledView, config: ValuationConfig = ValuationConfig()) -> ValuationResult:
    """Exact Shapley values of the K-NN utility in O(M N log N)."""
    _check_views(train, test)
    n, k = len(train), config.k_neighbors
    order = _neighbour_order(train, test)
    match = (train.labels[order] == test.labels[:, None]).astype(np.float64)
    sv = np.zeros_like(match)
    # min(k, n) / (n k) reduces to 1 / n once n >= k; below that the farthest
    # point is always within the k nearest and earns 1/k per match
    sv[:, n - 1] = match[:, n - 1] * min(k, n) / (n * k)
    for j in range(n - 2, -1, -1):
        rank = j + 1
        sv[:, j] = sv[:, j + 1] + (match[:, j] - match[:, j + 1]) / k * min(k, rank) / rank
    scores = np.zeros((len(test), n))
    np.put_along_axis(scores, order, sv, axis=1)
    return ValuationResult(scores.mean(axis=0))


def knn_utility(train: LabeledView, test: LabeledView, k: int) -> Callable[[tuple[int, ...]], float]:
    """Utility of a subset: mean over test points of (#label matches among its K nearest) / K."""
    order = _neighbour_order(train, test)
    match = train.labels[order] == test.labels[:, None]
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(train.features.shape[0])[None, :].repeat(len(test), 0), axis=1)

    def value(subset: tuple[int, ...]) -> float:
        if not subset:
            return 0.0
        idx = np.asarray(subset)
        total = 0.0
        for t in range(len(test)):
            ranks = np.sort(rank[t, idx])[:k]
            total += match[t, ranks].sum() / k
        return total / len(test)

    return value


def exact_shapley(
    train: LabeledView,
    test: LabeledView,
    value_fn: Callable[[tuple[int, ...]], float] | None = None,
    config: ValuationConfig = ValuationConfig(),
) -> ValuationResult:
    """Shapley values by full subset enumeration, with the empty-set utility fixed to 0."""
    _check_views(train, test)
    n = len(train)
    if n > MAX_EXACT_N:
        raise ConfigError(f"exact enumeration supports at most {MAX_EXACT_N} records, got {n}")
    if value_fn is None:
        value_fn = knn_utility(train, test, config.k_neighbors)
    cache: dict[tuple[int, ...], float] = {}

    def v(s):
        if s not in cache:
            cache[s] = 0.0 if not s else float(value_fn(s))
        return cache[s]

    scores = np.zeros(n)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        for size in range(n):
            weight = 1.0 / (n * comb(n - 1, size))
            for s in combinations(others, size):
                with_i = tuple(sorted(s + (i,)))
                scores[i] += weight * (v(with_i) - v(s))
    return ValuationResult(scores)


def value_synthetic(
    encoder: TabularEncoder, synthetic: Dataset, real: Dataset, config: ValuationConfig = ValuationConfig()
) -> ValuationResult:
    """KNN-Shapley score of each synthetic record measured against real records."""
    train, test = labeled_views(encoder, synthetic, real, config)
    return knn_shapley(train, test, config)

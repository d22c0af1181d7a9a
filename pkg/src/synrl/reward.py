"""The data-value critic: Shapley utility minus an l1 fidelity penalty."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, TabularEncoder
from .exceptions import ConfigError, DataError, SchemaError


@dataclass(frozen=True)
class RewardConfig:
    fidelity_weight: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.fidelity_weight) or self.fidelity_weight < 0:
            raise ConfigError("fidelity_weight must be finite and >= 0")


@dataclass(frozen=True)
class RewardReport:
    utility: np.ndarray
    fidelity_l1: np.ndarray
    reward: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.reward))

    @property
    def std(self) -> float:
        return float(np.std(self.reward))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_index", "utility", "fidelity_l1", "reward"])
            for i, (u, f, r) in enumerate(zip(self.utility, self.fidelity_l1, self.reward)):
                w.writerow([i, repr(float(u)), repr(float(f)), repr(float(r))])


def fidelity_l1(encoder: TabularEncoder, x, x_hat) -> np.ndarray | float:
    """l1 distance between encoded rows; one categorical flip costs exactly 2.

    Accepts single rows, row matrices, or Datasets (paired row by row).
    """
    single = not isinstance(x, Dataset) and np.ndim(x) == 1
    if isinstance(x, Dataset) and isinstance(x_hat, Dataset) and x.schema.names != x_hat.schema.names:
        raise SchemaError("fidelity_l1 needs rows under the same schema")
    a, b = encoder.transform(x), encoder.transform(x_hat)
    if a.shape != b.shape:
        raise SchemaError(f"cannot pair {a.shape[0]} real rows with {b.shape[0]} synthetic rows")
    d = np.abs(a - b).sum(axis=1)
    return float(d[0]) if single else d


def reward(s, x, x_hat, encoder: TabularEncoder, config: RewardConfig = RewardConfig()):
    """``s - fidelity_weight * fidelity_l1(x, x_hat)``, elementwise for batches."""
    s_arr = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s_arr)):
        raise DataError("utility scores must be finite")
    r = s_arr - config.fidelity_weight * np.asarray(fidelity_l1(encoder, x, x_hat))
    return float(r) if np.ndim(r) == 0 else r


def reward_report(s, real: Dataset, synthetic: Dataset, encoder: TabularEncoder,
                  config: RewardConfig = RewardConfig()) -> RewardReport:
    s = np.asarray(s, dtype=np.float64)
    fid = np.asarray(fidelity_l1(encoder, real, synthetic))
    return RewardReport(utility=s, fidelity_l1=fid, reward=s - config.fidelity_weight * fid)


def rank_batch(rewards) -> np.ndarray:
    """Indices ordered best reward first; equal rewards keep their original order."""
    r = np.asarray(rewards, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise DataError("rewards must be finite")
    return np.argsort(-r, kind="stable")


def select_top_k(batch: Dataset, rewards, k: int) -> Dataset:
    if not 1 <= k <= len(batch):
        raise ConfigError(f"k must lie in [1, {len(batch)}], got {k}")
    if len(rewards) != len(batch):
        raise DataError("one reward per batch row is required")
    return batch.take(rank_batch(rewards)[:k])

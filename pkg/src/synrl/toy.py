"""Reproducible clinical-trial-shaped toy tables with a known feature-target link."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import CATEGORICAL, CONTINUOUS, TARGET, ColumnSchema, Dataset, TableSchema
from .exceptions import ConfigError

TARGET_NAME = "response"


@dataclass(frozen=True)
class ToyTrialSpec:
    """Shape of a toy trial.

    ``coefficients`` weight the standardized features in order
    ``vital_0..vital_{c-1}, event_0..event_{b-1}``; missing entries are 0.
    A binary target is Bernoulli(sigmoid(intercept + w.x + noise)); a
    continuous one is ``intercept + w.x + noise``.
    """

    n_patients: int = 400
    n_continuous: int = 5
    n_binary_events: int = 5
    coefficients: tuple[float, ...] = (2.5, 0.0, 0.0, 0.0, 0.0, 2.0)
    intercept: float = 0.0
    noise: float = 0.5
    target_kind: str = "binary"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.n_patients < 50:
            raise ConfigError("toy trials need n_patients >= 50")
        if self.n_continuous < 0 or self.n_binary_events < 0 or self.n_continuous + self.n_binary_events < 1:
            raise ConfigError("toy trials need at least one feature")
        if len(self.coefficients) > self.n_continuous + self.n_binary_events:
            raise ConfigError("more coefficients than features")
        if self.target_kind not in ("binary", "continuous"):
            raise ConfigError(f"unknown target_kind {self.target_kind!r}")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coefficients"] = list(self.coefficients)
        return d


def toy_schema(spec: ToyTrialSpec) -> TableSchema:
    cols = [ColumnSchema(f"vital_{i}", CONTINUOUS) for i in range(spec.n_continuous)]
    cols += [ColumnSchema(f"event_{i}", CATEGORICAL, ("0", "1")) for i in range(spec.n_binary_events)]
    if spec.target_kind == "binary":
        cols.append(ColumnSchema(TARGET_NAME, CATEGORICAL, ("0", "1"), TARGET))
    else:
        cols.append(ColumnSchema(TARGET_NAME, CONTINUOUS, target_role=TARGET))
    return TableSchema(tuple(cols))


def make_toy_trial(spec: ToyTrialSpec = ToyTrialSpec()) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    n, c, b = spec.n_patients, spec.n_continuous, spec.n_binary_events
    # a shared frailty factor correlates vitals and event flags
    frailty = rng.standard_normal(n)
    loadings = np.linspace(0.7, -0.4, max(c, 1))[:c]
    centers = 50.0 + 20.0 * np.arange(c)
    scales = 5.0 + 3.0 * np.arange(c)
    z_cont = loadings * frailty[:, None] + np.sqrt(1 - loadings**2) * rng.standard_normal((n, c))
    vitals = np.round(centers + scales * z_cont, 3)
    prevalence = np.linspace(0.5, 0.15, max(b, 1))[:b]
    event_logit = np.log(prevalence / (1 - prevalence)) + 0.8 * frailty[:, None]
    events = (rng.random((n, b)) < 1.0 / (1.0 + np.exp(-event_logit))).astype(float)

    std_feats = np.hstack([z_cont, (events - events.mean(0)) / np.maximum(events.std(0), 1e-8)])
    w = np.zeros(c + b)
    w[: len(spec.coefficients)] = spec.coefficients
    signal = spec.intercept + std_feats @ w + spec.noise * rng.standard_normal(n)
    if spec.target_kind == "binary":
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-signal))).astype(float)
        if y.min() == y.max():
            y[0] = 1.0 - y[0]
    else:
        y = np.round(signal, 4)
    return Dataset(toy_schema(spec), np.hstack([vitals, events, y[:, None]]))

"""Utility, fidelity and privacy audit of a synthetic table against real data."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import kstwobign, rankdata
from sklearn.metrics import silhouette_score
from sklearn.model_selection import KFold

from .data import Dataset, TabularEncoder
from .exceptions import DataError, MetricError
from .predictor import CLASSIFICATION, REGRESSION, ForestConfig, fit_forest

PAIR_BINS = 10
MATCH_TOLERANCE_SIGMA = 0.5


def _check_pair(real: Dataset, synthetic: Dataset, metric: str):
    if real.schema.names != synthetic.schema.names:
        raise MetricError(metric, "real and synthetic schemas differ")
    if len(real) == 0 or len(synthetic) == 0:
        raise MetricError(metric, "empty dataset")


# -- utility -------------------------------------------------------------

def auroc(y_true, scores) -> float:
    """Rank-based AUROC with tie-averaged ranks (Mann-Whitney U / (n_pos * n_neg))."""
    y = np.asarray(y_true).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _xy(encoder: TabularEncoder, data: Dataset, target: str):
    dims = encoder.column_dims(exclude=[target])
    return encoder.transform(data)[:, dims], data.column(target)


def _score(model, X, y, task):
    if task == REGRESSION:
        return float(np.mean((model.predict(X) - y) ** 2))
    classes = list(model.classes_)
    positives = np.unique(y)
    if len(positives) > 2 or max(positives) > 1:
        # multi-class: macro one-vs-rest
        proba = model.predict_proba(X)
        vals = []
        for c in positives:
            col = proba[:, classes.index(c)] if c in classes else np.zeros(len(X))
            vals.append(auroc(y == c, col))
        return float(np.mean(vals))
    pos = model.predict_proba(X)[:, classes.index(1.0)] if 1.0 in classes else np.zeros(len(X))
    return auroc(y == 1.0, pos)


def ml_efficiency(
    synthetic: Dataset | None,
    real: Dataset,
    target: str,
    task: str | None = None,
    forest_config: ForestConfig = ForestConfig(),
    folds: int = 10,
    seed: int = 0,
    reference: bool = False,
) -> dict:
    """Train on synthetic data, test on each held-out 10% fold of the real data.

    With ``reference=True`` the model is instead trained on the remaining
    real folds. Single-class folds are skipped for AUROC and recorded.
    """
    if target not in real.schema.names:
        raise MetricError("ml_efficiency", f"target {target!r} absent from real data")
    col = real.schema.columns[real.schema.index(target)]
    task = task or (CLASSIFICATION if col.is_categorical else REGRESSION)
    if not reference:
        if synthetic is None or len(synthetic) == 0:
            raise MetricError("ml_efficiency", "empty synthetic dataset")
        if target not in synthetic.schema.names:
            raise MetricError("ml_efficiency", f"target {target!r} absent from synthetic data")
    encoder = TabularEncoder().fit(real)
    X_real, y_real = _xy(encoder, real, target)
    model = None
    if not reference:
        X_syn, y_syn = _xy(encoder, synthetic, target)
        model = fit_forest(X_syn, y_syn, forest_config, task)
    values, skipped = [], []
    for k, (train_idx, test_idx) in enumerate(KFold(folds, shuffle=True, random_state=seed).split(X_real)):
        y_test = y_real[test_idx]
        if task == CLASSIFICATION and len(np.unique(y_test)) < 2:
            skipped.append(k)
            continue
        fold_model = model if model is not None else fit_forest(
            X_real[train_idx], y_real[train_idx], forest_config, task
        )
        values.append(_score(fold_model, X_real[test_idx], y_test, task))
    if not values:
        raise MetricError("ml_efficiency", "every fold was single-class")
    return {
        "metric": "AUROC" if task == CLASSIFICATION else "MSE",
        "mean": float(np.mean(values)),
        "std": float(np.std(values)),
        "per_fold": [float(v) for v in values],
        "skipped_folds": skipped,
    }


# -- fidelity ------------------------------------------------------------

def silhouette(real: Dataset, synthetic: Dataset) -> float:
    """Mean silhouette of the real-vs-synthetic labelling in encoded space."""
    _check_pair(real, synthetic, "silhouette")
    if len(real) < 2 or len(synthetic) < 2:
        raise MetricError("silhouette", "each set needs at least 2 records")
    enc = TabularEncoder().fit(real)
    X = np.vstack([enc.transform(real), enc.transform(synthetic)])
    labels = np.r_[np.zeros(len(real)), np.ones(len(synthetic))]
    return float(silhouette_score(X, labels, metric="euclidean"))


def ks_statistic(a, b) -> float:
    a, b = np.sort(np.asarray(a, dtype=float)), np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / len(a)
    cdf_b = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(cdf_a - cdf_b)))


def ks_test(a, b) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value (effective size n*m/(n+m))."""
    d = ks_statistic(a, b)
    en = len(a) * len(b) / (len(a) + len(b))
    return d, float(kstwobign.sf(np.sqrt(en) * d))


def ks_dissimilar_pct(real: Dataset, synthetic: Dataset, alpha: float = 0.05) -> float:
    _check_pair(real, synthetic, "ks_dissimilar_pct")
    n_cols = len(real.schema)
    rejected = sum(ks_test(real.values[:, j], synthetic.values[:, j])[1] < alpha for j in range(n_cols))
    return 100.0 * rejected / n_cols


def _frequencies(codes, n):
    return np.bincount(np.asarray(codes, dtype=int), minlength=n) / len(codes)


def tv_distance(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def column_shapes(real: Dataset, synthetic: Dataset) -> float:
    _check_pair(real, synthetic, "column_shapes")
    sims = []
    for j, col in enumerate(real.schema.columns):
        if col.is_categorical:
            sims.append(1.0 - tv_distance(_frequencies(real.values[:, j], col.n_categories),
                                          _frequencies(synthetic.values[:, j], col.n_categories)))
        else:
            sims.append(1.0 - ks_statistic(real.values[:, j], synthetic.values[:, j]))
    return float(np.mean(sims))


def _discretize(real_col, syn_col, is_categorical, n_categories):
    if is_categorical:
        return real_col.astype(int), syn_col.astype(int), n_categories
    inner = np.unique(np.quantile(real_col, np.linspace(0, 1, PAIR_BINS + 1)[1:-1]))
    return (np.searchsorted(inner, real_col, side="right"),
            np.searchsorted(inner, syn_col, side="right"), len(inner) + 1)


def _pearson(a, b):
    if np.all(a == a[0]) or np.all(b == b[0]):
        return None
    return float(np.corrcoef(a, b)[0, 1])


def pair_similarity(real: Dataset, synthetic: Dataset, i: int, j: int) -> float:
    ci, cj = real.schema.columns[i], real.schema.columns[j]
    ri, rj = real.values[:, i], real.values[:, j]
    si, sj = synthetic.values[:, i], synthetic.values[:, j]
    if not ci.is_categorical and not cj.is_categorical:
        rho_r, rho_s = _pearson(ri, rj), _pearson(si, sj)
        if rho_r is not None and rho_s is not None:
            return 1.0 - abs(rho_r - rho_s) / 2.0
    ai, bi, ni = _discretize(ri, si, ci.is_categorical, ci.n_categories)
    aj, bj, nj = _discretize(rj, sj, cj.is_categorical, cj.n_categories)
    p = np.bincount(ai * nj + aj, minlength=ni * nj) / len(ai)
    q = np.bincount(bi * nj + bj, minlength=ni * nj) / len(bi)
    return 1.0 - tv_distance(p, q)


def column_pair_trends(real: Dataset, synthetic: Dataset) -> float:
    _check_pair(real, synthetic, "column_pair_trends")
    n = len(real.schema)
    if n < 2:
        raise MetricError("column_pair_trends", "needs at least 2 columns")
    sims = [pair_similarity(real, synthetic, i, j) for i in range(n) for j in range(i + 1, n)]
    return float(np.mean(sims))


def correlation_matrix(data: Dataset) -> np.ndarray:
    """Pearson correlations of the raw cell values (category codes for categorical columns)."""
    v = data.values
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.corrcoef(v, rowvar=False)
    return np.nan_to_num(np.atleast_2d(c))


# -- privacy -------------------------------------------------------------

def _subsample_rows(size: int, n: int, rng) -> np.ndarray:
    if size == n:
        return np.arange(n)
    return np.sort(rng.choice(size, n, replace=False))


def adversarial_accuracy(R: np.ndarray, S: np.ndarray) -> float:
    """Nearest-neighbour adversarial accuracy of two equally sized point sets."""
    d_rs = cdist(R, S)
    d_rr = cdist(R, R)
    d_ss = cdist(S, S)
    np.fill_diagonal(d_rr, np.inf)
    np.fill_diagonal(d_ss, np.inf)
    term_r = np.mean(d_rs.min(axis=1) > d_rr.min(axis=1))
    term_s = np.mean(d_rs.min(axis=0) > d_ss.min(axis=1))
    return float(0.5 * (term_r + term_s))


def privacy_loss(train_real: Dataset, test_real: Dataset, synthetic: Dataset, seed: int = 0) -> tuple[float, float]:
    """``AA(test, syn) - AA(train, syn)`` and its absolute value.

    All three sets are subsampled (by ``seed``) to the smallest size. Rows
    are first put in a canonical content order and sets of equal length
    share one draw, so the result ignores row order and a memorized copy is
    sampled exactly where its source is.
    """
    for d in (test_real, synthetic):
        _check_pair(train_real, d, "privacy_loss")
    n = min(len(train_real), len(test_real), len(synthetic))
    if n < 2:
        raise MetricError("privacy_loss", "each set needs at least 2 records")
    enc = TabularEncoder().fit(train_real)
    rng = np.random.default_rng(seed)
    draws: dict[int, np.ndarray] = {}

    def sub(data: Dataset) -> np.ndarray:
        if len(data) not in draws:
            draws[len(data)] = _subsample_rows(len(data), n, rng)
        x = enc.transform(data)
        x = x[np.lexsort(x.T[::-1])]
        return x[draws[len(data)]]

    tr, te, sy = sub(train_real), sub(test_real), sub(synthetic)
    signed = adversarial_accuracy(te, sy) - adversarial_accuracy(tr, sy)
    return float(signed), float(abs(signed))


def inference_risks(train_real: Dataset, control_real: Dataset, synthetic: Dataset,
                    n_attacks: int = 500, seed: int = 0) -> dict[str, float]:
    """Per-column attribute-inference risk, normalized by a control-set baseline."""
    for d in (control_real, synthetic):
        _check_pair(train_real, d, "mean_inference_risk")
    enc = TabularEncoder().fit(train_real)
    rng = np.random.default_rng(seed)
    tr_vals, ct_vals = train_real.values, control_real.values
    take_tr = np.sort(rng.choice(len(tr_vals), min(n_attacks, len(tr_vals)), replace=False))
    take_ct = np.sort(rng.choice(len(ct_vals), min(n_attacks, len(ct_vals)), replace=False))
    tr_enc, ct_enc, sy_enc = enc.transform(train_real), enc.transform(control_real), enc.transform(synthetic)
    risks = {}
    for j, col in enumerate(train_real.schema.columns):
        dims = enc.column_dims(exclude=[col.name])
        tol = MATCH_TOLERANCE_SIGMA * enc.stds_[j]

        def rate(enc_rows, raw_rows):
            nearest = np.argmin(cdist(enc_rows[:, dims], sy_enc[:, dims]), axis=1)
            guess = synthetic.values[nearest, j]
            truth = raw_rows[:, j]
            return np.mean(guess == truth) if col.is_categorical else np.mean(np.abs(guess - truth) <= tol)

        a = rate(tr_enc[take_tr], tr_vals[take_tr])
        b = rate(ct_enc[take_ct], ct_vals[take_ct])
        risks[col.name] = 0.0 if b >= 1.0 else float(max(0.0, (a - b) / (1.0 - b)))
    return risks


def mean_inference_risk(train_real: Dataset, control_real: Dataset, synthetic: Dataset,
                        n_attacks: int = 500, seed: int = 0) -> float:
    if len(control_real) == 0:
        raise MetricError("mean_inference_risk", "empty control set")
    return float(np.mean(list(inference_risks(train_real, control_real, synthetic, n_attacks, seed).values())))


# -- report --------------------------------------------------------------

@dataclass
class MetricReport:
    utility: dict
    fidelity: dict
    privacy: dict
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(d["utility"], d["fidelity"], d["privacy"], d.get("provenance", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls.from_dict(json.loads(text))

    def flat(self) -> list[tuple[str, float]]:
        rows = [(f"utility.{self.utility['metric']}_mean", self.utility["mean"]),
                (f"utility.{self.utility['metric']}_std", self.utility["std"])]
        rows += [(f"fidelity.{k}", v) for k, v in self.fidelity.items()]
        rows += [(f"privacy.{k}", v) for k, v in self.privacy.items()]
        return rows

    def save(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(self.to_json() + "\n", encoding="utf-8")
        if csv_path is not None:
            with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["metric", "value"])
                for k, v in self.flat():
                    w.writerow([k, repr(float(v))])

    @classmethod
    def load(cls, path) -> "MetricReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def evaluate_all(
    real_train: Dataset,
    real_test: Dataset,
    synthetic: Dataset,
    target: str,
    task: str | None = None,
    forest_config: ForestConfig = ForestConfig(),
    folds: int = 10,
    seed: int = 0,
    n_attacks: int = 500,
    provenance: dict | None = None,
    utility_real: Dataset | None = None,
) -> MetricReport:
    """Run the full audit.

    ML efficiency is cross-validated over all real records (train and test
    splits together); privacy metrics treat ``real_test`` as the holdout the
    generator never saw. ``utility_real`` overrides the pool used for
    cross-validation.
    """
    if synthetic is None or len(synthetic) == 0:
        raise MetricError("evaluate_all", "empty synthetic dataset")
    if real_train.schema.names != synthetic.schema.names or real_test.schema.names != synthetic.schema.names:
        raise MetricError("evaluate_all", "real and synthetic schemas differ")
    real_all = Dataset.concat([real_train, real_test]) if utility_real is None else utility_real
    utility = ml_efficiency(synthetic, real_all, target, task, forest_config, folds, seed)
    fidelity = {
        "silhouette": silhouette(real_train, synthetic),
        "pct_dissimilar_columns": ks_dissimilar_pct(real_train, synthetic),
        "column_shapes": column_shapes(real_train, synthetic),
        "column_pair_trends": column_pair_trends(real_train, synthetic),
    }
    signed, absolute = privacy_loss(real_train, real_test, synthetic, seed)
    privacy = {
        "mean_inference_risk": mean_inference_risk(real_train, real_test, synthetic, n_attacks, seed),
        "privacy_loss_signed": signed,
        "privacy_loss_absolute": absolute,
    }
    prov = {"seeds": {"metrics": seed}, "config_hash": config_hash(
        {"forest": asdict(forest_config), "folds": folds, "n_attacks": n_attacks, "task": task, "target": target}
    )}
    prov.update(provenance or {})
    return MetricReport(utility, fidelity, privacy, prov)

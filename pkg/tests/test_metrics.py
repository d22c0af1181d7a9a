from itertools import product

import numpy as np
import pytest

from synrl.data import CATEGORICAL, CONTINUOUS, TARGET, ColumnSchema, Dataset, TableSchema, split
from synrl.exceptions import MetricError
from synrl.metrics import (
    MetricReport, adversarial_accuracy, auroc, column_pair_trends, column_shapes, evaluate_all,
    inference_risks, ks_dissimilar_pct, ks_test, mean_inference_risk, ml_efficiency, pair_similarity,
    privacy_loss, silhouette,
)
from synrl.predictor import ForestConfig
from synrl.toy import ToyTrialSpec, make_toy_trial

FAST = ForestConfig(n_trees=20)


def continuous(values, names=None):
    values = np.asarray(values, dtype=float)
    names = names or [f"c{j}" for j in range(values.shape[1])]
    return Dataset(TableSchema(tuple(ColumnSchema(n, CONTINUOUS) for n in names)), values)


@pytest.fixture(scope="module")
def trial():
    return make_toy_trial(ToyTrialSpec(n_patients=300, seed=11))


# -- utility ---------------------------------------------------------------

def test_auroc_matches_pair_counting():
    scores = np.array([0.1, 0.4, 0.4, 0.2, 0.9, 0.2])
    checked = 0
    for labels in product([0, 1], repeat=6):
        y = np.array(labels, dtype=bool)
        if y.all() or not y.any():
            continue
        pos, neg = scores[y], scores[~y]
        brute = np.mean([(p > n) + 0.5 * (p == n) for p in pos for n in neg])
        assert auroc(y, scores) == pytest.approx(brute, abs=1e-12)
        checked += 1
    assert checked == 62


def _labelled(x, y):
    schema = TableSchema((ColumnSchema("x", CONTINUOUS), ColumnSchema("y", CATEGORICAL, ("0", "1"), TARGET)))
    return Dataset(schema, np.column_stack([x, y]))


def test_perfect_feature_gives_auroc_one():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 200)
    data = _labelled(y + rng.uniform(0, 0.5, 200), y)
    res = ml_efficiency(data, data, "y", forest_config=FAST)
    assert res["per_fold"] == [1.0] * 10


def test_null_dependency_auroc_near_half():
    rng = np.random.default_rng(1)
    real = _labelled(rng.normal(size=400), rng.integers(0, 2, 400))
    syn = _labelled(rng.normal(size=400), rng.integers(0, 2, 400))
    assert abs(ml_efficiency(syn, real, "y", forest_config=FAST)["mean"] - 0.5) <= 0.1


def test_constant_regressor_fold_mse():
    rng = np.random.default_rng(2)
    schema = TableSchema((ColumnSchema("x", CONTINUOUS), ColumnSchema("t", CONTINUOUS, target_role=TARGET)))
    real = Dataset(schema, rng.normal(size=(100, 2)))
    syn = Dataset(schema, rng.normal(size=(60, 2)))
    res = ml_efficiency(syn, real, "t", forest_config=ForestConfig(n_trees=2, max_depth=0, bootstrap=False))
    assert res["metric"] == "MSE"
    from sklearn.model_selection import KFold
    c = syn.column("t").mean()
    expected = [np.mean((real.column("t")[te] - c) ** 2) for _, te in KFold(10, shuffle=True, random_state=0).split(real.values)]
    np.testing.assert_allclose(res["per_fold"], expected, atol=1e-12)
    # the prediction is the training mean, so the fold MSE splits into variance plus squared bias
    t = real.column("t")
    folds = [te for _, te in KFold(10, shuffle=True, random_state=0).split(real.values)]
    np.testing.assert_allclose(expected, [np.var(t[te]) + (t[te].mean() - c) ** 2 for te in folds], atol=1e-12)


# -- fidelity --------------------------------------------------------------

def test_identity_suite(trial):
    copy = Dataset(trial.schema, trial.values.copy())
    assert column_shapes(trial, copy) == 1.0
    assert ks_dissimilar_pct(trial, copy) == 0.0
    assert column_pair_trends(trial, copy) >= 1 - 1e-12
    assert silhouette(trial, copy) <= 1e-6


def test_silhouette_separated_and_interleaved():
    rng = np.random.default_rng(3)
    real = continuous(rng.normal(size=(200, 2)))
    far = continuous(rng.normal(size=(200, 2)) + 1000.0)
    assert silhouette(real, far) > 0.99
    a, b = continuous(rng.normal(size=(500, 2))), continuous(rng.normal(size=(500, 2)))
    assert abs(silhouette(a, b)) < 0.05


def test_ks_shift_detects_one_column_in_ten():
    rng = np.random.default_rng(4)
    real = rng.normal(size=(500, 10))
    syn = real.copy()
    syn[:, 3] += 10.0
    assert ks_dissimilar_pct(continuous(real), continuous(syn)) == 10.0


def test_ks_alpha_is_strict():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(40, 1)), rng.normal(0.6, 1, size=(40, 1))
    _, p = ks_test(a[:, 0], b[:, 0])
    assert ks_dissimilar_pct(continuous(a), continuous(b), alpha=p) == 0.0
    assert ks_dissimilar_pct(continuous(a), continuous(b), alpha=np.nextafter(p, 1)) == 100.0


def test_tv_column_similarity():
    schema = TableSchema((ColumnSchema("c", CATEGORICAL, ("a", "b")),))
    assert column_shapes(Dataset(schema, [[0], [1]]), Dataset(schema, [[1], [1]])) == 0.5


def test_flipped_correlation_scores_zero():
    x = np.arange(10.0)
    assert pair_similarity(continuous(np.c_[x, x]), continuous(np.c_[x, -x]), 0, 1) == pytest.approx(0.0, abs=1e-12)


def test_three_column_trend_construction():
    rng = np.random.default_rng(6)
    q, _ = np.linalg.qr(np.c_[np.ones(300), rng.normal(size=(300, 3))])
    u1, u2, u3 = q[:, 1], q[:, 2], q[:, 3]  # orthonormal and zero-mean
    real = continuous(np.c_[u1, u2, 0.8 * u1 + 0.6 * u3])
    syn = continuous(np.c_[u1, u2, -(0.8 * u1 + 0.6 * u3)])
    assert column_pair_trends(real, syn) == pytest.approx((1 + 1 + 0.2) / 3, abs=1e-12)


# -- privacy ---------------------------------------------------------------

def test_adversarial_accuracy_hand_case():
    assert adversarial_accuracy(np.array([[0.0], [1.0]]), np.array([[3.0], [10.0]])) == 0.75
    assert adversarial_accuracy(np.array([[0.0], [10.0]]), np.array([[0.0], [10.0]])) == 0.0


def test_adversarial_accuracy_iid_near_half():
    rng = np.random.default_rng(7)
    aa = adversarial_accuracy(rng.normal(size=(200, 3)), rng.normal(size=(200, 3)))
    assert 0.0 <= aa <= 1.0 and abs(aa - 0.5) <= 0.1


def test_privacy_loss_memorization_cases(trial):
    train, test = split(trial, 0.5, seed=0)
    signed, absolute = privacy_loss(train, test, train)
    assert signed > 0.4 and absolute == signed
    signed_rev, _ = privacy_loss(train, test, test)
    assert signed_rev < -0.4


def test_privacy_loss_disjoint_samples():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        sets = [continuous(rng.normal(size=(200, 3))) for _ in range(3)]
        assert abs(privacy_loss(*sets, seed=seed)[0]) < 0.1


def test_inference_risk_memorized_vs_independent(trial):
    train, control = trial.take(range(0, 150)), trial.take(range(150, 300))
    assert mean_inference_risk(train, control, train) > 0.8
    fresh = make_toy_trial(ToyTrialSpec(n_patients=150, seed=99))
    assert mean_inference_risk(train, control, fresh) < 0.15


def test_inference_risk_guarded_column():
    schema = TableSchema((ColumnSchema("x", CONTINUOUS), ColumnSchema("k", CATEGORICAL, ("a", "b"))))
    rng = np.random.default_rng(8)
    mk = lambda: Dataset(schema, np.c_[rng.normal(size=10), np.zeros(10)])  # noqa: E731
    assert inference_risks(mk(), mk(), mk())["k"] == 0.0


def test_metrics_ignore_synthetic_row_order(trial):
    train, test = split(trial, 0.8, seed=1)
    syn = make_toy_trial(ToyTrialSpec(n_patients=240, seed=5))
    shuffled = syn.take(np.random.default_rng(0).permutation(len(syn)))
    for fn in (column_shapes, column_pair_trends, silhouette, ks_dissimilar_pct):
        assert fn(train, syn) == pytest.approx(fn(train, shuffled), abs=1e-12)
    assert privacy_loss(train, test, syn)[0] == privacy_loss(train, test, shuffled)[0]


# -- report ----------------------------------------------------------------

def test_report_identity_and_round_trip(trial, tmp_path):
    train, test = split(trial, 0.8, seed=0)
    rep = evaluate_all(train, test, Dataset(train.schema, train.values.copy()), "response",
                       forest_config=FAST, n_attacks=100)
    assert rep.fidelity["column_shapes"] == 1.0 and rep.fidelity["pct_dissimilar_columns"] == 0.0
    assert rep.privacy["privacy_loss_absolute"] >= 0.4
    rep.save(tmp_path / "r.json", tmp_path / "r.csv")
    assert MetricReport.load(tmp_path / "r.json") == rep
    assert (tmp_path / "r.csv").read_text().startswith("metric,value\n")


def test_empty_synthetic_is_one_named_error(trial):
    empty = Dataset(trial.schema, np.zeros((0, len(trial.schema))))
    with pytest.raises(MetricError, match="empty"):
        evaluate_all(trial, trial, empty, "response")

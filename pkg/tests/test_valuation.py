from fractions import Fraction
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synrl.exceptions import ConfigError, DimensionMismatchError
from synrl.valuation import (
    LabeledView, ValuationConfig, bin_continuous_target, exact_shapley, knn_shapley, knn_utility,
)


def brute_knn_value(train_x, train_y, test_x, test_y, k):
    """Subset utility computed directly: sort the subset's distances for every test point."""
    def value(subset):
        if not subset:
            return 0.0
        total = 0.0
        for tx, ty in zip(test_x, test_y):
            d = [(float(np.sum((train_x[i] - tx) ** 2)), i) for i in subset]
            nearest = [i for _, i in sorted(d)[:k]]
            total += sum(train_y[i] == ty for i in nearest) / k
        return total / len(test_y)
    return value


def permutation_shapley(n, value):
    """Shapley values averaged over all n! arrival orders."""
    sv = np.zeros(n)
    orders = list(permutations(range(n)))
    for order in orders:
        seen = ()
        for i in order:
            with_i = tuple(sorted(seen + (i,)))
            sv[i] += value(with_i) - value(tuple(sorted(seen)))
            seen = with_i
    return sv / len(orders)


def views(train_x, train_y, test_x, test_y):
    return LabeledView(np.asarray(train_x, float), np.asarray(train_y)), LabeledView(
        np.asarray(test_x, float), np.asarray(test_y))


def test_single_matching_point():
    tr, te = views([[0.0]], [1], [[0.3]], [1])
    assert knn_shapley(tr, te, ValuationConfig(k_neighbors=1)).scores.tolist() == [1.0]


def test_no_matches_gives_zero():
    rng = np.random.default_rng(0)
    tr, te = views(rng.normal(size=(6, 2)), [0] * 6, rng.normal(size=(3, 2)), [1] * 3)
    assert np.all(knn_shapley(tr, te, ValuationConfig(k_neighbors=3)).scores == 0.0)


def test_match_miss_match_hand_values():
    # 1-NN, one test point at the origin, train points at distances 1, 2, 3.
    tr, te = views([[1.0], [2.0], [3.0]], [1, 0, 1], [[0.0]], [1])
    expected = [5 / 6, -1 / 6, 1 / 3]
    cfg = ValuationConfig(k_neighbors=1)
    np.testing.assert_allclose(knn_shapley(tr, te, cfg).scores, expected, atol=1e-12)
    np.testing.assert_allclose(exact_shapley(tr, te, config=cfg).scores, expected, atol=1e-12)


def test_hand_values_by_fractions():
    # the same instance, enumerated with exact arithmetic
    v = {(): 0, (0,): 1, (1,): 0, (2,): 1, (0, 1): 1, (0, 2): 1, (1, 2): 0, (0, 1, 2): 1}
    sv = [Fraction(0)] * 3
    for order in permutations(range(3)):
        seen = ()
        for i in order:
            nxt = tuple(sorted(seen + (i,)))
            sv[i] += Fraction(v[nxt] - v[seen], 6)
            seen = nxt
    assert sv == [Fraction(5, 6), Fraction(-1, 6), Fraction(1, 3)]


@st.composite
def instances(draw):
    n = draw(st.integers(1, 8))
    m = draw(st.integers(1, 4))
    k = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    return (rng.normal(size=(n, d)), rng.integers(0, 2, n), rng.normal(size=(m, d)), rng.integers(0, 2, m), k)


@settings(max_examples=150, deadline=None)
@given(instances())
def test_closed_form_matches_enumeration(inst):
    tx, ty, sx, sy, k = inst
    tr, te = views(tx, ty, sx, sy)
    cfg = ValuationConfig(k_neighbors=k)
    closed = knn_shapley(tr, te, cfg).scores
    oracle = exact_shapley(tr, te, brute_knn_value(tx, ty, sx, sy, k), cfg).scores
    np.testing.assert_allclose(closed, oracle, atol=1e-9, rtol=0)


@settings(max_examples=30, deadline=None)
@given(instances())
def test_subset_and_permutation_oracles_agree(inst):
    tx, ty, sx, sy, k = inst
    if len(ty) > 6:
        tx, ty = tx[:6], ty[:6]
    tr, te = views(tx, ty, sx, sy)
    value = brute_knn_value(tx, ty, sx, sy, k)
    np.testing.assert_allclose(
        exact_shapley(tr, te, value, ValuationConfig(k_neighbors=k)).scores,
        permutation_shapley(len(ty), value), atol=1e-12,
    )


def test_library_utility_matches_brute_force():
    rng = np.random.default_rng(5)
    tx, ty, sx, sy = rng.normal(size=(7, 2)), rng.integers(0, 2, 7), rng.normal(size=(3, 2)), rng.integers(0, 2, 3)
    tr, te = views(tx, ty, sx, sy)
    fast, slow = knn_utility(tr, te, 2), brute_knn_value(tx, ty, sx, sy, 2)
    for subset in [(), (0,), (1, 4), (0, 2, 3, 6), tuple(range(7))]:
        assert fast(subset) == pytest.approx(slow(subset), abs=1e-15)


def test_symmetry_for_duplicates():
    rng = np.random.default_rng(1)
    tx = rng.normal(size=(5, 2))
    tx[3] = tx[1]
    ty = np.array([1, 0, 1, 0, 1])
    tr, te = views(tx, ty, rng.normal(size=(2, 2)), [0, 1])
    s = exact_shapley(tr, te, config=ValuationConfig(k_neighbors=2)).scores
    assert s[1] == pytest.approx(s[3], abs=1e-12)


def test_efficiency():
    rng = np.random.default_rng(2)
    tx, ty, sx, sy = rng.normal(size=(8, 3)), rng.integers(0, 2, 8), rng.normal(size=(4, 3)), rng.integers(0, 2, 4)
    tr, te = views(tx, ty, sx, sy)
    s = knn_shapley(tr, te, ValuationConfig(k_neighbors=3)).scores
    full = brute_knn_value(tx, ty, sx, sy, 3)(tuple(range(8)))
    assert s.sum() == pytest.approx(full, abs=1e-12)


def test_median_binning_and_clamping():
    real, syn = bin_continuous_target([1, 2, 3, 4], [-10.0, 2.4, 2.6, 99.0], 2)
    assert real.tolist() == [0, 0, 1, 1]
    assert syn.tolist() == [0, 0, 1, 1]


def test_quantile_bins_are_balanced():
    real = np.random.default_rng(0).uniform(size=4000)
    binned, _ = bin_continuous_target(real, real[:3], 4)
    counts = np.bincount(binned, minlength=4)
    assert np.all(np.abs(counts / len(real) - 0.25) < 0.01)


def test_config_and_shape_errors():
    with pytest.raises(ConfigError):
        ValuationConfig(k_neighbors=0)
    with pytest.raises(ConfigError):
        bin_continuous_target([1, 2], [1], 1)
    tr, te = views([[0.0, 1.0]], [1], [[0.0]], [1])
    with pytest.raises(DimensionMismatchError):
        knn_shapley(tr, te)
    big = LabeledView(np.zeros((13, 1)), np.zeros(13, dtype=int))
    with pytest.raises(ConfigError):
        exact_shapley(big, te)

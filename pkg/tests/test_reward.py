import numpy as np
import pytest
from hypothesis import given, strategies as st

from synrl.data import CATEGORICAL, CONTINUOUS, ColumnSchema, Dataset, TableSchema, TabularEncoder
from synrl.exceptions import ConfigError, DataError
from synrl.reward import RewardConfig, fidelity_l1, rank_batch, reward, reward_report, select_top_k


def _encoder():
    schema = TableSchema((ColumnSchema("v", CONTINUOUS), ColumnSchema("c", CATEGORICAL, ("A", "B"))))
    # mean 0, std 1 by construction
    return TabularEncoder().fit(Dataset(schema, [[-1.0, 0], [1.0, 1]]))


@pytest.fixture
def enc():
    return _encoder()


def test_fidelity_cases(enc):
    assert fidelity_l1(enc, [0.3, 1], [0.3, 1]) == 0.0
    assert fidelity_l1(enc, [0.3, 1], [0.3, 0]) == 2.0
    assert fidelity_l1(enc, [0.3, 1], [1.3, 1]) == pytest.approx(1.0, abs=1e-15)


def test_reward_arithmetic(enc):
    assert reward(0.5, [0.2, 0], [0.2, 0], enc) == 0.5
    # fidelity 0.3 from a 0.3-sigma continuous gap
    assert reward(0.0, [0.0, 0], [0.3, 0], enc) == pytest.approx(-0.3, abs=1e-15)
    assert reward(0.2, [0.0, 0], [0.0, 1], enc) == 0.2 - 2.0


def test_weight_scales_penalty(enc):
    assert reward(0.2, [0.0, 0], [0.0, 1], enc, RewardConfig(0.25)) == 0.2 - 0.5
    assert reward(0.2, [0.0, 0], [0.0, 1], enc, RewardConfig(0.0)) == 0.2
    with pytest.raises(ConfigError):
        RewardConfig(-1.0)


@given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(-3, 3), st.floats(0.01, 3))
def test_monotonic(s, ds, gap, dgap):
    enc, x = _encoder(), [0.0, 0]
    lo = reward(s, x, [abs(gap), 0], enc)
    assert reward(s + ds, x, [abs(gap), 0], enc) > lo
    assert reward(s, x, [abs(gap) + dgap, 0], enc) < lo


def test_non_finite_utility(enc):
    with pytest.raises(DataError):
        reward(float("nan"), [0.0, 0], [0.0, 0], enc)


def test_rank_batch():
    assert rank_batch([0.2, 0.9, -0.1]).tolist() == [1, 0, 2]
    assert rank_batch([0.4] * 5).tolist() == [0, 1, 2, 3, 4]
    assert rank_batch([1.0, 3.0, 1.0, 3.0, 2.0]).tolist() == [1, 3, 4, 0, 2]
    with pytest.raises(DataError):
        rank_batch([0.0, np.inf])


def test_select_top_k(enc):
    batch = Dataset(enc.schema_, [[0.0, 0], [1.0, 1], [2.0, 0]])
    top = select_top_k(batch, [0.1, 0.3, 0.2], 3)
    assert top.values[:, 0].tolist() == [1.0, 2.0, 0.0]
    assert len(select_top_k(batch, [0.1, 0.3, 0.2], 1)) == 1
    with pytest.raises(ConfigError):
        select_top_k(batch, [0.1, 0.3, 0.2], 4)


def test_report_batch(enc, tmp_path):
    real = Dataset(enc.schema_, [[0.0, 0], [0.0, 0]])
    syn = Dataset(enc.schema_, [[0.0, 0], [0.0, 1]])
    rep = reward_report([0.5, 0.2], real, syn, enc)
    assert rep.reward.tolist() == [0.5, 0.2 - 2.0]
    rep.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "row_index,utility,fidelity_l1,reward"

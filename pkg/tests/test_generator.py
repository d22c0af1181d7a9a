import math

import numpy as np
import pytest
import torch

from synrl.data import CATEGORICAL, CONTINUOUS, ColumnSchema, Dataset, TableSchema
from synrl.exceptions import ConfigError, DimensionMismatchError, NonFiniteError, SchemaError
from synrl.generator import (
    DTYPE, PolicyPair, TVAE, VaeConfig, fit_vae, fit_vae_with_prediction_head, kl_divergence,
)

import gradcheck

SMALL = dict(latent_dim=4, encoder_hidden=(16,), decoder_hidden=(16,), batch_size=32)


@pytest.fixture(scope="module")
def fitted():
    from synrl.toy import ToyTrialSpec, make_toy_trial

    data = make_toy_trial(ToyTrialSpec(n_patients=80, seed=1))
    return data, TVAE(epochs=5, **SMALL).fit(data)


def test_kl_zero_at_prior():
    assert kl_divergence(torch.zeros(3, 4, dtype=DTYPE), torch.zeros(3, 4, dtype=DTYPE)).tolist() == [0.0] * 3
    assert float(kl_divergence(torch.ones(1, 1, dtype=DTYPE), torch.zeros(1, 1, dtype=DTYPE))[0]) == 0.5


def test_bitwise_determinism(fitted):
    data, model = fitted
    again = TVAE(epochs=5, **SMALL).fit(data)
    assert np.array_equal(again.parameter_vector(), model.parameter_vector())
    assert again.loss_history_ == model.loss_history_
    other = TVAE(epochs=5, **{**SMALL, "seed": 1}).fit(data)
    assert not np.array_equal(other.parameter_vector(), model.parameter_vector())


def test_loss_decreases_on_mixture():
    rng = np.random.default_rng(0)
    comp = rng.integers(0, 2, 1000)
    x = np.where(comp == 1, rng.normal(3.0, 0.5, 1000), rng.normal(-3.0, 0.5, 1000))
    schema = TableSchema((ColumnSchema("x", CONTINUOUS), ColumnSchema("g", CATEGORICAL, ("0", "1"))))
    model = TVAE(epochs=100, batch_size=64, latent_dim=2, encoder_hidden=(32,), decoder_hidden=(32,))
    model.fit(Dataset(schema, np.column_stack([x, comp])))
    assert model.loss_history_[-1] < model.loss_history_[0]


def test_sample_contract(fitted):
    data, model = fitted
    syn = model.sample(500, seed=3)
    assert len(syn) == 500 and syn.schema == data.schema
    assert model.sample(7, seed=3).equals(model.sample(7, seed=3))
    with pytest.raises(ConfigError):
        model.sample(0)


def test_zero_network_log_prob():
    schema = TableSchema((ColumnSchema("v", CONTINUOUS), ColumnSchema("c", CATEGORICAL, ("a", "b"))))
    data = Dataset(schema, [[1.0, 0], [3.0, 1], [2.0, 1]])
    model = TVAE(latent_dim=2, encoder_hidden=(3,), decoder_hidden=(3,), epochs=1).fit(data)
    with torch.no_grad():
        for p in model.net_.parameters():
            p.zero_()
    # decoder mean 0 in z-space is the column mean; sigma is exp(0) = 1; logits uniform
    x_hat = Dataset(schema, [[2.0, 0], [2.0, 1]])
    lp = model.log_prob_under(np.zeros((2, 2)), x_hat)
    expected = -0.5 * math.log(2 * math.pi) + math.log(0.5)
    np.testing.assert_allclose(lp, [expected, expected], rtol=0, atol=1e-15)


def test_generated_log_prob_is_consistent(fitted):
    data, model = fitted
    x_hat, z, lp = model.conditional_generate(data.take(range(10)), seed=5)
    np.testing.assert_allclose(model.log_prob_under(z, x_hat), lp, rtol=0, atol=1e-12)
    pair = PolicyPair.from_model(model)
    np.testing.assert_array_equal(pair.current.log_prob_under(z, x_hat) - pair.reference.log_prob_under(z, x_hat), 0.0)


def test_decoder_bias_slope(fitted):
    data, model = fitted
    pair = PolicyPair.from_model(model)
    cur = pair.current
    x_hat, z, _ = cur.conditional_generate(data.take(range(6)), seed=2)
    z_t = torch.as_tensor(z, dtype=DTYPE)
    x_t = torch.as_tensor(cur.encoder_.transform(x_hat), dtype=DTYPE)
    bias = cur.net_.dec_out.bias

    def log_ratio():
        return torch.sum(cur.log_prob_tensor(z_t, x_t) - pair.reference.log_prob_tensor(z_t, x_t))

    analytic = torch.autograd.grad(log_ratio(), bias)[0][0].item()
    h = 1e-5
    with torch.no_grad():
        bias[0] += h
        up = log_ratio().item()
        bias[0] -= 2 * h
        down = log_ratio().item()
        bias[0] += h
    assert abs((up - down) / (2 * h) - analytic) <= 1e-4 * max(abs(analytic), 1e-6)


def test_gradients_match_finite_differences():
    assert gradcheck.n_params(gradcheck.tiny_model(0)) <= 50
    for draw in range(3):
        assert gradcheck.elbo_gradient_error(draw) < 1e-4
        assert gradcheck.ratio_gradient_error(draw) < 1e-4


def test_zero_alpha_head_leaves_vae_untouched(fitted):
    data, _ = fitted
    cfg = VaeConfig(epochs=3, **{k: v for k, v in SMALL.items()})
    plain = fit_vae(data, cfg)
    headed = fit_vae_with_prediction_head(data, "response", 0.0, cfg)
    n_vae = sum(p.numel() for name, p in headed.net_.named_parameters() if not name.startswith("head"))
    assert np.array_equal(headed.parameter_vector()[:n_vae], plain.parameter_vector())
    assert headed.loss_history_ == plain.loss_history_
    with pytest.raises(SchemaError):
        fit_vae_with_prediction_head(data, "nope", 1.0, cfg)


def test_checkpoint_round_trip(fitted, tmp_path):
    _, model = fitted
    model.save(tmp_path / "a.json")
    back = TVAE.load(tmp_path / "a.json")
    back.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert back.sample(20, seed=9).equals(model.sample(20, seed=9))


def test_reference_is_frozen_copy(fitted):
    _, model = fitted
    pair = PolicyPair.from_model(model)
    assert pair.reference is not pair.current
    assert all(not p.requires_grad for p in pair.reference.net_.parameters())


def test_input_errors(fitted):
    data, model = fitted
    x_hat, z, _ = model.conditional_generate(data.take([0, 1]), seed=0)
    with pytest.raises(DimensionMismatchError):
        model.log_prob_under(z[:, :2], x_hat)
    with pytest.raises(DimensionMismatchError):
        model.log_prob_under(z[:1], x_hat)
    with pytest.raises(ConfigError):
        VaeConfig(latent_dim=0)


def test_divergent_training_raises(fitted):
    data, _ = fitted
    with pytest.raises(NonFiniteError):
        TVAE(epochs=50, learning_rate=1e280, **SMALL).fit(data)

"""Tabular VAE base generator.

The fitted :class:`TVAE` doubles as the RL policy: given a real record it
draws a latent code from the encoder and a synthetic record from the decoder,
and it reports the decoder log-density of that record so two models (the
tuned policy and its frozen reference) can be compared on the same latent.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .data import Dataset, TableSchema, TabularEncoder
from .exceptions import ConfigError, DataError, DimensionMismatchError, MissingFileError, NonFiniteError, SchemaError

DTYPE = torch.float64
LOG_SIGMA_BOUNDS = (-5.0, 5.0)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
CHECKPOINT_FORMAT = 1
PREDICTION_HEAD = (128, 128, 64, 32)


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 16
    encoder_hidden: tuple[int, ...] = (128, 128)
    decoder_hidden: tuple[int, ...] = (128, 128)
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(self.encoder_hidden))
        object.__setattr__(self, "decoder_hidden", tuple(self.decoder_hidden))
        widths = (self.latent_dim, self.batch_size, *self.encoder_hidden, *self.decoder_hidden)
        if any(int(w) < 1 for w in widths):
            raise ConfigError("all layer widths, latent_dim and batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Per-row KL(N(mu, exp(logvar)) || N(0, I))."""
    return 0.5 * torch.sum(mu**2 + torch.exp(logvar) - 1.0 - logvar, dim=1)


def _mlp(sizes: list[int]) -> nn.Sequential:
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers += [nn.Linear(a, b, dtype=DTYPE), nn.ReLU()]
    return nn.Sequential(*layers)


class _VaeNet(nn.Module):
    def __init__(self, width, n_cont, latent_dim, encoder_hidden, decoder_hidden, head_out=0, head_hidden=()):
        super().__init__()
        self.encoder = _mlp([width, *encoder_hidden])
        self.enc_mu = nn.Linear(encoder_hidden[-1], latent_dim, dtype=DTYPE)
        self.enc_logvar = nn.Linear(encoder_hidden[-1], latent_dim, dtype=DTYPE)
        self.decoder = _mlp([latent_dim, *decoder_hidden])
        self.dec_out = nn.Linear(decoder_hidden[-1], width, dtype=DTYPE)
        self.dec_log_sigma = nn.Parameter(torch.zeros(n_cont, dtype=DTYPE))
        if head_out:
            self.head = nn.Sequential(
                _mlp([latent_dim, *head_hidden]), nn.Linear(head_hidden[-1], head_out, dtype=DTYPE)
            )
        else:
            self.head = None

    def encode(self, x):
        h = self.encoder(x)
        return self.enc_mu(h), self.enc_logvar(h)

    def decode(self, z):
        return self.dec_out(self.decoder(z))


def _init_params(net: nn.Module, gen: torch.Generator) -> None:
    # PyTorch's default Linear init, drawn from an explicit generator.
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, nn.Linear):
                bound = 1.0 / math.sqrt(m.in_features)
                m.weight.uniform_(-bound, bound, generator=gen)
                m.bias.uniform_(-bound, bound, generator=gen)


class TVAE(BaseEstimator):
    """Variational autoencoder for mixed continuous/categorical tables.

    Continuous cells are modelled as Gaussians in z-scored space with one
    learned log-sigma per column; categorical cells as softmax distributions
    over their one-hot block. Setting ``prediction_target`` attaches a
    prediction head on the latent code trained with weight
    ``prediction_alpha``.
    """

    def __init__(
        self,
        latent_dim=16,
        encoder_hidden=(128, 128),
        decoder_hidden=(128, 128),
        epochs=300,
        batch_size=64,
        learning_rate=1e-3,
        seed=0,
        prediction_target=None,
        prediction_alpha=0.0,
        head_hidden=PREDICTION_HEAD,
    ):
        self.latent_dim = latent_dim
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.prediction_target = prediction_target
        self.prediction_alpha = prediction_alpha
        self.head_hidden = head_hidden

    @property
    def config(self) -> VaeConfig:
        return VaeConfig(
            self.latent_dim, tuple(self.encoder_hidden), tuple(self.decoder_hidden),
            self.epochs, self.batch_size, self.learning_rate, self.seed,
        )

    # -- construction -------------------------------------------------

    def _build(self, schema: TableSchema, encoder: TabularEncoder) -> None:
        self.config  # validates widths
        self.schema_ = schema
        self.encoder_ = encoder
        self._cont_dims = torch.as_tensor(encoder.continuous_dims_, dtype=torch.long)
        self._cat_blocks = encoder.categorical_blocks_
        head_out = 0
        if self.prediction_target is not None:
            col = schema.columns[schema.index(self.prediction_target)]
            head_out = col.n_categories if col.is_categorical else 1
            self._target_col = col
            self._target_slice = encoder.blocks_[schema.index(self.prediction_target)]
        self.net_ = _VaeNet(
            encoder.width_, len(self._cont_dims), int(self.latent_dim),
            [int(h) for h in self.encoder_hidden], [int(h) for h in self.decoder_hidden],
            head_out, [int(h) for h in self.head_hidden],
        )
        gen = torch.Generator().manual_seed(int(self.seed))
        vae_modules = [self.net_.encoder, self.net_.enc_mu, self.net_.enc_logvar, self.net_.decoder, self.net_.dec_out]
        for m in vae_modules:
            _init_params(m, gen)
        if self.net_.head is not None:
            _init_params(self.net_.head, torch.Generator().manual_seed(int(self.seed) + 1))

    # -- densities ------------------------------------------------------

    def _log_sigma(self) -> torch.Tensor:
        return torch.clamp(self.net_.dec_log_sigma, *LOG_SIGMA_BOUNDS)

    def decoder_log_prob(self, out: torch.Tensor, x_enc: torch.Tensor) -> torch.Tensor:
        """Per-row log p_dec(x | z) given decoder outputs ``out``, in encoded space."""
        lp = torch.zeros(out.shape[0], dtype=DTYPE)
        if len(self._cont_dims):
            mu = out[:, self._cont_dims]
            ls = self._log_sigma()
            resid = (x_enc[:, self._cont_dims] - mu) / torch.exp(ls)
            lp = lp + torch.sum(-HALF_LOG_2PI - ls - 0.5 * resid**2, dim=1)
        for b in self._cat_blocks:
            lp = lp + torch.sum(torch.log_softmax(out[:, b], dim=1) * x_enc[:, b], dim=1)
        return lp

    def _sample_decoder(self, out: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
        x = torch.zeros_like(out)
        if len(self._cont_dims):
            noise = torch.randn(out.shape[0], len(self._cont_dims), generator=gen, dtype=DTYPE)
            x[:, self._cont_dims] = out[:, self._cont_dims] + torch.exp(self._log_sigma()) * noise
        for b in self._cat_blocks:
            probs = torch.softmax(out[:, b], dim=1)
            idx = torch.multinomial(probs, 1, generator=gen).squeeze(1)
            x[torch.arange(out.shape[0]), b.start + idx] = 1.0
        return x

    def negative_elbo(self, x_enc: torch.Tensor, noise: torch.Tensor, alpha: float | None = None):
        """Mean negative ELBO (plus the weighted prediction loss) for a batch with fixed latent noise.

        Returns ``(total, negative_elbo, prediction_loss)``.
        """
        mu, logvar = self.net_.encode(x_enc)
        z = mu + torch.exp(0.5 * logvar) * noise
        nll = -self.decoder_log_prob(self.net_.decode(z), x_enc)
        neg_elbo = torch.mean(nll + kl_divergence(mu, logvar))
        pred = torch.zeros((), dtype=DTYPE)
        if self.net_.head is not None:
            pred_out = self.net_.head(z)
            tgt = x_enc[:, self._target_slice]
            if self._target_col.is_categorical:
                pred = torch.nn.functional.cross_entropy(pred_out, torch.argmax(tgt, dim=1))
            else:
                pred = torch.mean((pred_out - tgt) ** 2)
        a = self.prediction_alpha if alpha is None else alpha
        return neg_elbo + a * pred, neg_elbo, pred

    # -- estimator API --------------------------------------------------

    def fit(self, X: Dataset, y=None):
        if len(X) == 0:
            raise DataError("cannot fit a generator on an empty dataset")
        if self.prediction_target is not None and self.prediction_target not in X.schema.names:
            raise SchemaError(f"prediction target {self.prediction_target!r} not in schema")
        self._build(X.schema, TabularEncoder().fit(X))
        x_all = torch.as_tensor(self.encoder_.transform(X), dtype=DTYPE)
        gen = torch.Generator().manual_seed(int(self.seed))
        opt = torch.optim.Adam(self.net_.parameters(), lr=self.learning_rate)
        self.loss_history_, self.prediction_loss_history_ = [], []
        n, bs = len(x_all), int(self.batch_size)
        for epoch in range(int(self.epochs)):
            perm = torch.randperm(n, generator=gen)
            tot, tot_pred = 0.0, 0.0
            for b, start in enumerate(range(0, n, bs)):
                xb = x_all[perm[start:start + bs]]
                noise = torch.randn(len(xb), int(self.latent_dim), generator=gen, dtype=DTYPE)
                loss, neg_elbo, pred = self.negative_elbo(xb, noise)
                if not torch.isfinite(loss):
                    raise NonFiniteError(f"non-finite VAE loss at epoch {epoch + 1}, batch {b + 1}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                tot += float(neg_elbo.detach()) * len(xb)
                tot_pred += float(pred.detach()) * len(xb)
            self.loss_history_.append(tot / n)
            if self.net_.head is not None:
                self.prediction_loss_history_.append(tot_pred / n)
        return self

    def _check(self):
        check_is_fitted(self, "net_")

    def _encode_rows(self, X) -> torch.Tensor:
        if isinstance(X, Dataset) and X.schema.names != self.schema_.names:
            raise SchemaError("dataset schema does not match the generator's schema")
        return torch.as_tensor(self.encoder_.transform(X), dtype=DTYPE)

    def sample(self, n: int, seed: int = 0) -> Dataset:
        """Draw ``n`` records from the prior through the decoder."""
        self._check()
        if int(n) < 1:
            raise ConfigError(f"sample size must be >= 1, got {n}")
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            z = torch.randn(int(n), int(self.latent_dim), generator=gen, dtype=DTYPE)
            x = self._sample_decoder(self.net_.decode(z), gen)
        return self.encoder_.to_dataset(x.numpy())

    def rollout(self, x_enc: torch.Tensor, gen: torch.Generator):
        """Conditional generation on encoded inputs, returning encoded outputs.

        Yields ``(x_hat_enc, z, log_prob)`` as tensors. The synthetic record
        is snapped to the cell grid (decoded then re-encoded) before scoring,
        so its log-probability matches :meth:`log_prob_under` exactly.
        """
        with torch.no_grad():
            mu, logvar = self.net_.encode(x_enc)
            z = mu + torch.exp(0.5 * logvar) * torch.randn(mu.shape, generator=gen, dtype=DTYPE)
            raw = self._sample_decoder(self.net_.decode(z), gen)
            x_hat = torch.as_tensor(
                self.encoder_.transform(self.encoder_.inverse_transform(raw.numpy())), dtype=DTYPE
            )
            lp = self.decoder_log_prob(self.net_.decode(z), x_hat)
        return x_hat, z, lp

    def conditional_generate(self, X, seed: int = 0):
        """Generate one synthetic record per input record.

        Returns ``(x_hat, z, log_prob)``: a Dataset, the latent codes drawn
        from q(z|x), and log p_dec(x_hat|z) per record.
        """
        self._check()
        x_hat, z, lp = self.rollout(self._encode_rows(X), torch.Generator().manual_seed(int(seed)))
        return self.encoder_.to_dataset(x_hat.numpy()), z.numpy(), lp.numpy()

    def log_prob_tensor(self, z: torch.Tensor, x_hat_enc: torch.Tensor) -> torch.Tensor:
        """Differentiable log p_dec(x_hat | z) under this model."""
        return self.decoder_log_prob(self.net_.decode(z), x_hat_enc)

    def log_prob_under(self, z, x_hat) -> np.ndarray:
        self._check()
        z = torch.as_tensor(np.atleast_2d(np.asarray(z, dtype=np.float64)), dtype=DTYPE)
        if z.shape[1] != int(self.latent_dim):
            raise DimensionMismatchError(f"latent width {z.shape[1]} != {self.latent_dim}")
        x = self._encode_rows(x_hat)
        if len(x) != len(z):
            raise DimensionMismatchError("one latent code per synthetic record is required")
        with torch.no_grad():
            return self.log_prob_tensor(z, x).numpy()

    def prediction_loss(self, X: Dataset) -> float:
        """Prediction-head loss on ``X`` using the latent means (head models only)."""
        self._check()
        if self.net_.head is None:
            raise ConfigError("model has no prediction head")
        x = self._encode_rows(X)
        with torch.no_grad():
            mu, _ = self.net_.encode(x)
            _, _, pred = self.negative_elbo(x, torch.zeros_like(mu), alpha=0.0)
        return float(pred)

    # -- persistence ----------------------------------------------------

    def parameter_vector(self) -> np.ndarray:
        self._check()
        return np.concatenate([p.detach().numpy().ravel() for p in self.net_.parameters()])

    def to_checkpoint(self) -> dict:
        self._check()
        params = {
            k: {"shape": list(v.shape), "data": [float(x) for x in v.detach().numpy().ravel()]}
            for k, v in self.net_.state_dict().items()
        }
        return {
            "format_version": CHECKPOINT_FORMAT,
            "schema": self.schema_.to_dict(),
            "encoder": self.encoder_.to_dict(),
            "config": _jsonable(self.get_params()),
            "parameters": params,
            "loss_history": [float(v) for v in self.loss_history_],
            "prediction_loss_history": [float(v) for v in self.prediction_loss_history_],
        }

    @classmethod
    def from_checkpoint(cls, doc: dict) -> "TVAE":
        if doc.get("format_version") != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format {doc.get('format_version')!r}")
        params = dict(doc["config"])
        for key in ("encoder_hidden", "decoder_hidden", "head_hidden"):
            params[key] = tuple(params[key])
        model = cls(**params)
        schema = TableSchema.from_dict(doc["schema"])
        model._build(schema, TabularEncoder.from_dict(schema, doc["encoder"]))
        state = {
            k: torch.tensor(v["data"], dtype=DTYPE).reshape(v["shape"]) for k, v in doc["parameters"].items()
        }
        model.net_.load_state_dict(state)
        model.loss_history_ = list(doc["loss_history"])
        model.prediction_loss_history_ = list(doc.get("prediction_loss_history", []))
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_checkpoint()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TVAE":
        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"checkpoint not found: {path}")
        return cls.from_checkpoint(json.loads(path.read_text(encoding="utf-8")))


def _jsonable(params: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


GeneratorModel = TVAE


@dataclass
class PolicyPair:
    """The trainable policy and a frozen copy of it taken at fine-tuning start."""

    current: TVAE
    reference: TVAE = field(default=None)

    def __post_init__(self):
        if self.reference is None:
            self.reference = copy.deepcopy(self.current)
        for p in self.reference.net_.parameters():
            p.requires_grad_(False)

    @classmethod
    def from_model(cls, model: TVAE) -> "PolicyPair":
        return cls(copy.deepcopy(model))


def fit_vae(data: Dataset, config: VaeConfig = VaeConfig()) -> TVAE:
    return TVAE(**asdict(config)).fit(data)


def fit_vae_with_prediction_head(data: Dataset, target: str, alpha: float, config: VaeConfig = VaeConfig()) -> TVAE:
    """VAE whose loss adds ``alpha`` times a prediction loss from the latent code to ``target``."""
    return TVAE(**asdict(config), prediction_target=target, prediction_alpha=alpha).fit(data)


def sample(model: TVAE, n: int, seed: int = 0) -> Dataset:
    return model.sample(n, seed)


def conditional_generate(model, x, seed: int = 0):
    if isinstance(model, PolicyPair):
        model = model.current
    if not isinstance(x, Dataset):
        x = Dataset(model.schema_, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return model.conditional_generate(x, seed)


def log_prob_under(model: TVAE, z, x_hat) -> np.ndarray:
    return model.log_prob_under(z, x_hat)

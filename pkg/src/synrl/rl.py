"""Bandit-style PPO fine-tuning of the generator against the data-value critic.

Each epoch is one round of episodes: every real record is shown to the
policy, which answers with a synthetic record; the critic scores the batch
and the policy takes clipped policy-gradient steps on the resulting
advantages. A per-record log-ratio against the frozen reference policy is
subtracted from the reward before advantages are formed.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import Dataset
from .exceptions import ConfigError, DataError, NonFiniteError, SchemaError
from .generator import DTYPE, PolicyPair, TVAE
from .reward import RewardConfig
from .valuation import ValuationConfig, knn_shapley, labeled_views

ADV_EPS = 1e-8


@dataclass(frozen=True)
class RlConfig:
    finetune_epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-4
    clip_epsilon: float = 0.2
    kl_coefficient: float = 1.0
    samples_per_record: int = 1
    advantage_normalization: bool = True
    seed: int = 0
    patience: int | None = None

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ConfigError("clip_epsilon must lie in (0, 1)")
        if self.kl_coefficient < 0:
            raise ConfigError("kl_coefficient must be >= 0")
        if self.samples_per_record < 1 or self.finetune_epochs < 1 or self.batch_size < 1:
            raise ConfigError("finetune_epochs, batch_size and samples_per_record must be >= 1")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_reward: float
    mean_utility: float
    mean_fidelity: float
    mean_kl: float
    objective: float


@dataclass
class FinetuneLog:
    epochs: list[EpochStats] = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def column(self, name: str) -> list[float]:
        return [getattr(e, name) for e in self.epochs]

    def to_rows(self) -> list[dict]:
        return [asdict(e) for e in self.epochs]

    def to_csv(self, path) -> None:
        names = list(EpochStats.__dataclass_fields__)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for e in self.epochs:
                w.writerow([e.epoch] + [repr(float(getattr(e, n))) for n in names[1:]])

    @classmethod
    def from_csv(cls, path) -> "FinetuneLog":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochStats(int(r["epoch"]), *(float(r[n]) for n in list(EpochStats.__dataclass_fields__)[1:]))
                    for r in rows])


def clipped_surrogate(logp_new: torch.Tensor, logp_old: torch.Tensor, advantages: torch.Tensor,
                      clip_epsilon: float) -> torch.Tensor:
    """Per-record ``min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)``."""
    ratio = torch.exp(logp_new - logp_old)
    return torch.minimum(ratio * advantages, torch.clamp(ratio, 1 - clip_epsilon, 1 + clip_epsilon) * advantages)


def advantages_from(signal: np.ndarray, normalize: bool) -> np.ndarray:
    if not normalize:
        return signal.copy()
    return (signal - signal.mean()) / (signal.std() + ADV_EPS)


def policy_step(model: TVAE, optimizer, z, x_hat, logp_old, advantages, clip_epsilon: float) -> float:
    """One ascent step on the mean clipped surrogate; returns the surrogate value."""
    lp_new = model.log_prob_tensor(z, x_hat)
    surrogate = clipped_surrogate(lp_new, logp_old, advantages, clip_epsilon).mean()
    optimizer.zero_grad()
    (-surrogate).backward()
    optimizer.step()
    return float(surrogate.detach())


def stop_criterion(log: FinetuneLog, patience: int = 5) -> bool:
    """True once the objective has gone ``patience`` epochs without a new best."""
    if len(log) == 0:
        raise DataError("empty fine-tuning log")
    obj = np.asarray(log.column("objective"))
    return bool(len(obj) - 1 - int(np.argmax(obj)) >= patience)


def finetune(
    pair: PolicyPair,
    real: Dataset,
    test: Dataset | None = None,
    valuation_config: ValuationConfig = ValuationConfig(),
    reward_config: RewardConfig = RewardConfig(),
    rl_config: RlConfig = RlConfig(),
) -> tuple[TVAE, FinetuneLog]:
    """Fine-tune ``pair.current`` in place; ``pair.reference`` stays frozen.

    Shapley utilities are measured against ``test`` (default: ``real``).
    """
    model, ref = pair.current, pair.reference
    test = real if test is None else test
    if len(real) == 0 or len(test) == 0:
        raise DataError("fine-tuning needs non-empty real and test data")
    if real.schema.names != model.schema_.names or test.schema.names != real.schema.names:
        raise SchemaError("real, test and generator schemas must match")
    encoder = model.encoder_
    gen = torch.Generator().manual_seed(int(rl_config.seed))
    x_real = torch.as_tensor(encoder.transform(real), dtype=DTYPE)
    x_in = x_real.repeat_interleave(rl_config.samples_per_record, dim=0)
    optimizer = torch.optim.Adam(model.net_.parameters(), lr=rl_config.learning_rate)
    log = FinetuneLog()
    for epoch in range(1, rl_config.finetune_epochs + 1):
        x_hat, z, logp_old = model.rollout(x_in, gen)
        synthetic = encoder.to_dataset(x_hat.numpy())
        utility = knn_shapley(*labeled_views(encoder, synthetic, test, valuation_config), valuation_config).scores
        fid = torch.sum(torch.abs(x_in - x_hat), dim=1).numpy()
        reward = utility - reward_config.fidelity_weight * fid
        with torch.no_grad():
            log_ratio = (logp_old - ref.log_prob_tensor(z, x_hat)).numpy()
        signal = reward - rl_config.kl_coefficient * log_ratio
        if not np.all(np.isfinite(signal)):
            raise NonFiniteError(f"non-finite fine-tuning objective at epoch {epoch}")
        adv = torch.as_tensor(advantages_from(signal, rl_config.advantage_normalization), dtype=DTYPE)
        perm = torch.randperm(len(x_in), generator=gen)
        for start in range(0, len(x_in), rl_config.batch_size):
            idx = perm[start:start + rl_config.batch_size]
            policy_step(model, optimizer, z[idx], x_hat[idx], logp_old[idx], adv[idx], rl_config.clip_epsilon)
        log.epochs.append(EpochStats(
            epoch,
            float(reward.mean()),
            float(utility.mean()),
            float(fid.mean()),
            float(log_ratio.mean()),
            float(signal.mean()),
        ))
        if rl_config.patience is not None and stop_criterion(log, rl_config.patience):
            break
    return model, log

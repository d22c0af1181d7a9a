"""sklearn-style front end: fit a base generator, fine-tune it, then sample or rank."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .generator import PolicyPair, TVAE
from .reward import RewardConfig, reward_report, select_top_k
from .rl import RlConfig, finetune
from .valuation import ValuationConfig, value_synthetic


class SynRL(BaseEstimator):
    """Reward-aligned tabular generator.

    Parameters
    ----------
    generator : TVAE, optional
        Unfitted generator template (cloned), or an already fitted model
        used as the base when ``refit_base`` is False.
    valuation_config, reward_config, rl_config
        Settings for the critic and the fine-tuning loop.
    refit_base : bool
        Fit a fresh clone of ``generator`` on the training data.

    Attributes
    ----------
    base_ : TVAE
        The base generator before fine-tuning.
    model_ : TVAE
        The fine-tuned generator.
    log_ : FinetuneLog
    """

    def __init__(self, generator=None, valuation_config=ValuationConfig(), reward_config=RewardConfig(),
                 rl_config=RlConfig(), refit_base=True):
        self.generator = generator
        self.valuation_config = valuation_config
        self.reward_config = reward_config
        self.rl_config = rl_config
        self.refit_base = refit_base

    def fit(self, X: Dataset, y=None, test: Dataset | None = None):
        if self.refit_base or self.generator is None:
            template = self.generator if self.generator is not None else TVAE()
            self.base_ = clone(template).fit(X)
        else:
            check_is_fitted(self.generator, "net_")
            self.base_ = self.generator
        self.pair_ = PolicyPair.from_model(self.base_)
        self.model_, self.log_ = finetune(
            self.pair_, X, test, self.valuation_config, self.reward_config, self.rl_config
        )
        return self

    def sample(self, n: int, seed: int = 0) -> Dataset:
        check_is_fitted(self, "model_")
        return self.model_.sample(n, seed)

    def generate(self, X: Dataset, seed: int = 0, samples_per_record: int = 1) -> Dataset:
        """One (or more) synthetic records per real record, in input order."""
        check_is_fitted(self, "model_")
        rows = X.take(np.repeat(np.arange(len(X)), samples_per_record))
        return self.model_.conditional_generate(rows, seed)[0]

    def rank(self, real: Dataset, k: int, seed: int = 0, samples_per_record: int = 2,
             test: Dataset | None = None):
        """Generate candidates from ``real``, score them with the critic and keep the best ``k``.

        Returns ``(top_k, candidates, report)``.
        """
        check_is_fitted(self, "model_")
        candidates = self.generate(real, seed, samples_per_record)
        paired = real.take(np.repeat(np.arange(len(real)), samples_per_record))
        scores = value_synthetic(self.model_.encoder_, candidates, real if test is None else test,
                                 self.valuation_config).scores
        report = reward_report(scores, paired, candidates, self.model_.encoder_, self.reward_config)
        return select_top_k(candidates, report.reward, k), candidates, report

"""Reward-aligned synthetic tabular data: VAE generator, data-value critic, RL fine-tuning and audit metrics."""

__version__ = "0.1.0"

from .data import ColumnSchema, Dataset, TableSchema, TabularEncoder, infer_schema, load_table, read_csv, split, write_csv
from .estimator import SynRL
from .exceptions import SynRLError
from .generator import PolicyPair, TVAE, VaeConfig
from .metrics import MetricReport, evaluate_all, ml_efficiency
from .predictor import ForestConfig, RandomForestClassifier, RandomForestRegressor
from .reward import RewardConfig, rank_batch, reward, select_top_k
from .rl import FinetuneLog, RlConfig, finetune
from .toy import ToyTrialSpec, make_toy_trial
from .valuation import ValuationConfig, exact_shapley, knn_shapley

__all__ = [
    "ColumnSchema", "Dataset", "FinetuneLog", "ForestConfig", "MetricReport", "PolicyPair",
    "RandomForestClassifier", "RandomForestRegressor", "RewardConfig", "RlConfig", "SynRL", "SynRLError",
    "TVAE", "TableSchema", "TabularEncoder", "ToyTrialSpec", "ValuationConfig", "VaeConfig",
    "evaluate_all", "exact_shapley", "finetune", "infer_schema", "knn_shapley", "load_table",
    "make_toy_trial", "ml_efficiency", "rank_batch", "read_csv", "reward", "select_top_k", "split", "write_csv",
]

"""Pipeline configuration and the stages behind each CLI subcommand."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, TableSchema, load_table, read_csv, split, write_csv
from .exceptions import ConfigError, MissingFileError, OutputExistsError, SchemaError
from .generator import PolicyPair, TVAE, VaeConfig
from .metrics import MetricReport, config_hash, correlation_matrix, evaluate_all, ml_efficiency
from .predictor import ForestConfig
from .reward import RewardConfig, reward_report, select_top_k
from .rl import RlConfig, finetune
from .toy import ToyTrialSpec, make_toy_trial
from .valuation import ValuationConfig, value_synthetic


def _experiment_rl() -> RlConfig:
    return RlConfig(finetune_epochs=30, learning_rate=1e-3, kl_coefficient=3e-3)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one run needs. ``data=None`` means: synthesize a toy trial."""

    data: str | None = None
    schema: str | None = None
    output_dir: str | None = None
    target: str | None = "response"
    task: str | None = None
    toy: ToyTrialSpec = field(default_factory=ToyTrialSpec)
    vae: VaeConfig = field(default_factory=VaeConfig)
    rl: RlConfig = field(default_factory=_experiment_rl)
    valuation: ValuationConfig = field(default_factory=ValuationConfig)
    reward: RewardConfig = field(default_factory=lambda: RewardConfig(fidelity_weight=1e-3))
    forest: ForestConfig = field(default_factory=ForestConfig)
    train_fraction: float = 0.8
    seeds: tuple[int, ...] = (0, 1, 2)
    metric_seed: int = 0
    folds: int = 10
    n_attacks: int = 500
    generate_count: int | None = None
    top_k: int | None = None
    rank_samples_per_record: int = 2

    _NESTED = {
        "toy": ToyTrialSpec, "vae": VaeConfig, "rl": RlConfig, "valuation": ValuationConfig,
        "reward": RewardConfig, "forest": ForestConfig,
    }

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in self._NESTED:
                v = v.to_dict() if hasattr(v, "to_dict") else asdict(v)
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = {}
        for k, v in d.items():
            if k in cls._NESTED:
                sub = cls._NESTED[k]
                sub_known = {f.name for f in fields(sub)}
                bad = set(v) - sub_known
                if bad:
                    raise ConfigError(f"unknown keys in {k!r}: {', '.join(sorted(bad))}")
                try:
                    v = sub(**v)
                except TypeError as exc:
                    raise ConfigError(f"invalid {k!r} section: {exc}") from exc
            kwargs[k] = v
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"config file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return config_hash(d)


# -- run directories -----------------------------------------------------

def prepare_output(out, force: bool) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise OutputExistsError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: PipelineConfig, started: float, extra: dict | None = None):
    import scipy
    import sklearn
    import torch

    artifacts = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "config_hash": config.hash(),
        "seeds": list(config.seeds),
        "versions": {
            "synrl": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "torch": torch.__version__, "scikit-learn": sklearn.__version__, "scipy": scipy.__version__,
        },
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_time_s": round(time.time() - started, 3),
        "artifacts": {str(p.relative_to(out)): _sha256(p) for p in artifacts},
    }
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def _write_matrix(path: Path, names: list[str], m: np.ndarray):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + names)
        for name, row in zip(names, m):
            w.writerow([name] + [repr(float(v)) for v in row])


# -- stages --------------------------------------------------------------

def load_data(config: PipelineConfig, seed: int | None = None) -> Dataset:
    if config.data is None:
        spec = config.toy if seed is None else replace(config.toy, seed=config.toy.seed + seed)
        return make_toy_trial(spec)
    return load_table(config.data, config.schema, target=config.target)


def target_name(data: Dataset, config: PipelineConfig) -> str:
    if config.target is not None:
        if config.target not in data.schema.names:
            raise SchemaError(f"target {config.target!r} not in schema")
        return config.target
    if data.schema.target is None:
        raise ConfigError("no target column configured")
    return data.schema.target.name


def ensure_target(data: Dataset, name: str) -> Dataset:
    if data.schema.target is not None and data.schema.target.name == name:
        return data
    return Dataset(data.schema.with_target(name), data.values)


def fit_stage(train: Dataset, config: PipelineConfig, seed: int) -> TVAE:
    return TVAE(**asdict(replace(config.vae, seed=seed))).fit(train)


def finetune_stage(base: TVAE, train: Dataset, test: Dataset | None, config: PipelineConfig, seed: int):
    pair = PolicyPair.from_model(base)
    return finetune(pair, train, test, config.valuation, config.reward, replace(config.rl, seed=seed))


def generate_stage(model: TVAE, n: int | None, seed: int, conditional_on: Dataset | None = None,
                   samples_per_record: int = 1) -> Dataset:
    if conditional_on is not None:
        rows = conditional_on.take(np.repeat(np.arange(len(conditional_on)), samples_per_record))
        return model.conditional_generate(rows, seed)[0]
    return model.sample(n, seed)


def rank_stage(model: TVAE, real: Dataset, synthetic: Dataset, k: int, config: PipelineConfig,
               samples_per_record: int, test: Dataset | None = None):
    """Pair synthetic row ``i`` with real row ``i // samples_per_record`` and keep the top ``k``."""
    if len(synthetic) != len(real) * samples_per_record:
        raise ConfigError(
            f"{len(synthetic)} synthetic rows cannot pair with {len(real)} real rows x {samples_per_record}"
        )
    paired = real.take(np.repeat(np.arange(len(real)), samples_per_record))
    scores = value_synthetic(model.encoder_, synthetic, real if test is None else test, config.valuation)
    report = reward_report(scores.scores, paired, synthetic, model.encoder_, config.reward)
    return select_top_k(synthetic, report.reward, k), report


def evaluate_stage(train: Dataset, test: Dataset, synthetic: Dataset, config: PipelineConfig,
                   target: str, provenance: dict, utility_real: Dataset | None = None) -> MetricReport:
    return evaluate_all(train, test, synthetic, target, config.task, config.forest, config.folds,
                        config.metric_seed, config.n_attacks, provenance, utility_real)


def save_report(report: MetricReport, out: Path, stem: str):
    report.save(out / f"{stem}.json", out / f"{stem}.csv")


# -- full experiment -----------------------------------------------------

SUMMARY_FIELDS = [
    "seed", "real_auroc_or_mse", "base_utility", "synrl_utility",
    "base_column_shapes", "synrl_column_shapes", "base_column_pair_trends", "synrl_column_pair_trends",
    "base_silhouette", "synrl_silhouette", "base_privacy_loss_abs", "synrl_privacy_loss_abs",
    "base_inference_risk", "synrl_inference_risk", "reward_epoch_first", "reward_epoch_last",
]


def summary_row(seed: int, real_ref: dict, base: MetricReport, synrl: MetricReport, log_rows: list[dict]) -> dict:
    return {
        "seed": seed,
        "real_auroc_or_mse": real_ref["mean"],
        "base_utility": base.utility["mean"],
        "synrl_utility": synrl.utility["mean"],
        "base_column_shapes": base.fidelity["column_shapes"],
        "synrl_column_shapes": synrl.fidelity["column_shapes"],
        "base_column_pair_trends": base.fidelity["column_pair_trends"],
        "synrl_column_pair_trends": synrl.fidelity["column_pair_trends"],
        "base_silhouette": base.fidelity["silhouette"],
        "synrl_silhouette": synrl.fidelity["silhouette"],
        "base_privacy_loss_abs": base.privacy["privacy_loss_absolute"],
        "synrl_privacy_loss_abs": synrl.privacy["privacy_loss_absolute"],
        "base_inference_risk": base.privacy["mean_inference_risk"],
        "synrl_inference_risk": synrl.privacy["mean_inference_risk"],
        "reward_epoch_first": log_rows[0]["mean_reward"],
        "reward_epoch_last": log_rows[-1]["mean_reward"],
    }


def write_summary(rows: list[dict], out: Path):
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if k != "seed" else v) for k, v in r.items()})
    (out / "summary.json").write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")


def run_seed(config: PipelineConfig, seed: int, out: Path) -> dict:
    """All stages for one seed, each artifact written under ``out``.

    Both generators deliver one conditional sample per training record, so
    the comparison isolates the effect of fine-tuning on the policy.
    """
    out.mkdir(parents=True, exist_ok=True)
    data = load_data(config, seed)
    target = target_name(data, config)
    data = ensure_target(data, target)
    data.schema.save(out / "schema.json")
    train, test = split(data, config.train_fraction, seed)
    write_csv(train, out / "train.csv")
    write_csv(test, out / "test.csv")

    base = fit_stage(train, config, seed)
    base.save(out / "base.ckpt.json")
    tuned, log = finetune_stage(TVAE.load(out / "base.ckpt.json"), train, None, config, seed)
    tuned.save(out / "synrl.ckpt.json")
    log.to_csv(out / "finetune_log.csv")

    gen_seed = seed + 1000
    base_syn = generate_stage(base, None, gen_seed, conditional_on=train)
    synrl_syn = generate_stage(tuned, None, gen_seed, conditional_on=train)
    write_csv(base_syn, out / "base_synthetic.csv")
    write_csv(synrl_syn, out / "synrl_synthetic.csv")

    spr = config.rank_samples_per_record
    candidates = generate_stage(tuned, None, gen_seed + 1, conditional_on=train, samples_per_record=spr)
    k = config.top_k or len(train)
    top, rewards = rank_stage(tuned, train, candidates, k, config, spr)
    write_csv(top, out / "synrl_ranked_top_k.csv")
    rewards.to_csv(out / "rank_rewards.csv")

    prov = {"dataset": config.data or "toy", "seed": seed, "config_hash": config.hash()}
    base_report = evaluate_stage(train, test, base_syn, config, target, {**prov, "generator": "tvae"})
    synrl_report = evaluate_stage(train, test, synrl_syn, config, target, {**prov, "generator": "synrl"})
    save_report(base_report, out, "report_base")
    save_report(synrl_report, out, "report_synrl")
    real_ref = ml_efficiency(None, Dataset.concat([train, test]), target, config.task, config.forest,
                             config.folds, config.metric_seed, reference=True)
    (out / "real_reference.json").write_text(json.dumps(real_ref, indent=2) + "\n", encoding="utf-8")

    names = data.schema.names
    _write_matrix(out / "corr_real.csv", names, correlation_matrix(train))
    _write_matrix(out / "corr_base.csv", names, correlation_matrix(base_syn))
    _write_matrix(out / "corr_synrl.csv", names, correlation_matrix(synrl_syn))
    return summary_row(seed, real_ref, base_report, synrl_report, log.to_rows())


def summary_from_artifacts(seed_dir: Path, seed: int) -> dict:
    """Rebuild a summary row from the files of one seed directory."""
    from .rl import FinetuneLog

    real_ref = json.loads((seed_dir / "real_reference.json").read_text(encoding="utf-8"))
    base = MetricReport.load(seed_dir / "report_base.json")
    synrl = MetricReport.load(seed_dir / "report_synrl.json")
    return summary_row(seed, real_ref, base, synrl, FinetuneLog.from_csv(seed_dir / "finetune_log.csv").to_rows())


def run_experiment(config: PipelineConfig, out, force: bool = False) -> list[dict]:
    started = time.time()
    out = prepare_output(out, force)
    recorded = config.to_dict()
    recorded.pop("output_dir")
    (out / "config.json").write_text(json.dumps(recorded, indent=2) + "\n", encoding="utf-8")
    rows = [run_seed(config, s, out / f"seed_{s}") for s in config.seeds]
    write_summary(rows, out)
    write_manifest(out, "experiment", config, started)
    return rows


def read_dataset(path, schema_path=None, schema: TableSchema | None = None, target: str | None = None) -> Dataset:
    if schema is not None:
        return read_csv(path, schema)
    return load_table(path, schema_path, target=target)

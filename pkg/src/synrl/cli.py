"""Command-line entry point: ``synrl <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .data import Dataset, TableSchema, write_csv
from .exceptions import ConfigError, SynRLError
from .generator import TVAE
from .pipeline import (
    PipelineConfig,
    ensure_target,
    evaluate_stage,
    finetune_stage,
    fit_stage,
    generate_stage,
    load_data,
    prepare_output,
    rank_stage,
    read_dataset,
    run_experiment,
    save_report,
    target_name,
    write_manifest,
)
from .toy import make_toy_trial

EXIT_CODES = """exit codes:
  0  success
  1  unexpected internal error
  2  invalid configuration or arguments
  3  missing input file
  4  schema error (unknown column, bad category, missing value, constant column)
  5  data or metric error (shape mismatch, empty table)
  6  non-finite value during training
  7  output directory not empty (pass --force)

errors are reported on stderr as one JSON line: {"error": ..., "exit_code": ..., "message": ...}"""


def _global_flags(default) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default(None), help="JSON file mirroring PipelineConfig")
    p.add_argument("--out", default=default(None), help="output directory")
    p.add_argument("--seed", type=int, default=default(None), help="override the run seed")
    p.add_argument("--force", action="store_true", default=default(False), help="overwrite a non-empty output directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synrl",
        description="Train, fine-tune and audit a reward-aligned tabular data generator.",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        parents=[_global_flags(lambda v: v)],
    )
    # flags repeated after the subcommand must not reset values given before it
    shared = _global_flags(lambda v: argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[shared], epilog=EXIT_CODES,
                              formatter_class=argparse.RawDescriptionHelpFormatter)

    p = add("toygen", "write a toy clinical-trial table and its schema")
    p.add_argument("--n-patients", type=int)
    p.add_argument("--null", action="store_true", help="make the target independent of every feature")

    for name, help_ in (("fit", "train the base generator"), ("finetune", "RL fine-tune a checkpoint")):
        p = add(name, help_)
        p.add_argument("--data", help="training CSV (default: config data, else a toy trial)")
        p.add_argument("--schema", help="schema JSON (default: inferred)")
        p.add_argument("--target")
        if name == "finetune":
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--test", help="CSV the critic values synthetic records against (default: --data)")

    p = add("generate", "sample synthetic records from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-n", "--n", type=int, dest="n", help="number of unconditional samples")
    p.add_argument("--conditional-on", help="CSV of real records to condition on, one output per record")
    p.add_argument("--samples-per-record", type=int, default=1)

    p = add("rank", "score synthetic records with the critic and keep the best k")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="real CSV the synthetic rows were generated from")
    p.add_argument("--synthetic", required=True)
    p.add_argument("-k", "--k", type=int, dest="k")
    p.add_argument("--samples-per-record", type=int, default=1)
    p.add_argument("--test", help="valuation CSV (default: --data)")

    p = add("evaluate", "audit synthetic data for utility, fidelity and privacy")
    p.add_argument("--real", required=True, help="real CSV the generator was trained on")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--holdout", help="real CSV the generator never saw (default: --real)")
    p.add_argument("--schema")
    p.add_argument("--target")

    add("experiment", "fit, fine-tune, generate, rank and evaluate for every seed")
    return parser


def _config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    updates = {}
    if args.out:
        updates["output_dir"] = args.out
    if args.seed is not None:
        updates["seeds"] = (args.seed,)
    for key in ("data", "schema", "target"):
        if getattr(args, key, None):
            updates[key] = getattr(args, key)
    return replace(config, **updates) if updates else config


def _out(config: PipelineConfig, force: bool) -> Path:
    if not config.output_dir:
        raise ConfigError("no output directory: pass --out or set output_dir in the config")
    return prepare_output(config.output_dir, force)


def _training_data(config: PipelineConfig, seed: int) -> tuple[Dataset, str]:
    data = load_data(config, seed if config.data is None else None)
    target = target_name(data, config)
    return ensure_target(data, target), target


def _real(path, schema: TableSchema) -> Dataset:
    return read_dataset(path, schema=schema)


def cmd_toygen(args, config, out):
    spec = config.toy
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.n_patients is not None:
        spec = replace(spec, n_patients=args.n_patients)
    if args.null:
        spec = replace(spec, coefficients=())
    data = make_toy_trial(spec)
    write_csv(data, out / "toy.csv")
    data.schema.save(out / "schema.json")
    (out / "toy_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    return {"rows": len(data)}


def cmd_fit(args, config, out):
    seed = config.seeds[0]
    data, _ = _training_data(config, seed)
    data.schema.save(out / "schema.json")
    model = fit_stage(data, config, seed)
    model.save(out / "base.ckpt.json")
    return {"final_loss": model.loss_history_[-1]}


def cmd_finetune(args, config, out):
    seed = config.seeds[0]
    base = TVAE.load(args.checkpoint)
    if config.data is None:
        data, _ = _training_data(config, seed)
    else:
        data = _real(config.data, base.schema_)
    test = _real(args.test, base.schema_) if args.test else None
    tuned, log = finetune_stage(base, data, test, config, seed)
    tuned.save(out / "synrl.ckpt.json")
    log.to_csv(out / "finetune_log.csv")
    return {"epochs": len(log)}


def cmd_generate(args, config, out):
    model = TVAE.load(args.checkpoint)
    seed = config.seeds[0]
    if args.samples_per_record < 1:
        raise ConfigError("--samples-per-record must be >= 1")
    if args.conditional_on:
        cond = _real(args.conditional_on, model.schema_)
        syn = generate_stage(model, None, seed, cond, args.samples_per_record)
    else:
        n = args.n if args.n is not None else config.generate_count
        if n is None:
            raise ConfigError("pass -n, --conditional-on, or set generate_count in the config")
        syn = generate_stage(model, n, seed)
    write_csv(syn, out / "synthetic.csv")
    return {"rows": len(syn)}


def cmd_rank(args, config, out):
    model = TVAE.load(args.checkpoint)
    real = _real(args.data, model.schema_)
    syn = _real(args.synthetic, model.schema_)
    test = _real(args.test, model.schema_) if args.test else None
    k = args.k if args.k is not None else (config.top_k or len(real))
    top, report = rank_stage(model, real, syn, k, config, args.samples_per_record, test)
    write_csv(top, out / "top_k.csv")
    report.to_csv(out / "rewards.csv")
    return {"kept": len(top)}


def cmd_evaluate(args, config, out):
    real = read_dataset(args.real, args.schema, target=args.target or config.target)
    target = target_name(real, replace(config, target=args.target or config.target))
    real = ensure_target(real, target)
    syn = _real(args.synthetic, real.schema)
    prov = {"real": str(args.real), "synthetic": str(args.synthetic), "config_hash": config.hash()}
    if args.holdout:
        report = evaluate_stage(real, _real(args.holdout, real.schema), syn, config, target, prov)
    else:
        # without a holdout, privacy is measured against the training records themselves
        report = evaluate_stage(real, real, syn, config, target, prov, utility_real=real)
    save_report(report, out, "report")
    return {"utility": report.utility["mean"]}


def cmd_experiment(args, config, out):
    run_experiment(config, out, force=True)
    return None


COMMANDS = {
    "toygen": cmd_toygen, "fit": cmd_fit, "finetune": cmd_finetune, "generate": cmd_generate,
    "rank": cmd_rank, "evaluate": cmd_evaluate, "experiment": cmd_experiment,
}


def _apply_threads():
    raw = os.environ.get("SYNRL_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SYNRL_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("SYNRL_THREADS must be >= 1")
    import torch

    torch.set_num_threads(n)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_threads()
        config = _config(args)
        started = time.time()
        out = _out(config, args.force)
        extra = COMMANDS[args.command](args, config, out)
        if args.command != "experiment":
            write_manifest(out, args.command, config, started, {"result": extra} if extra else None)
    except SynRLError as exc:
        _report(exc, exc.exit_code)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort guard so stderr stays one parsable line
        _report(exc, 1)
        return 1
    return 0


def _report(exc: BaseException, code: int):
    msg = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    print(json.dumps(msg), file=sys.stderr)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

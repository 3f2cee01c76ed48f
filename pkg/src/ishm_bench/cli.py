"""
Command-line entry point: ``ishm-bench {gen,train,score,eval,bench-time,report}``.

Exit codes: 0 success, 1 runtime failure, 2 invalid config or usage, 3 missing inputs.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .checkpoint import MODEL_FILE, load_model, save_model
from .cnn_autoencoder import CnnAEConfig, CnnAutoencoder, cnn_ae_scores, cnn_ae_train
from .config import (
    MODEL_CHOICES,
    VARIANT_CHOICES,
    Config,
    RunConfig,
    load_config_file,
    resolve_run_config,
    write_run_config,
)
from .core import (
    Dataset,
    GenConfig,
    InvalidConfigError,
    InvalidDistributionError,
    InvalidParameterError,
    ProfileMissingError,
    SignalInstance,
)
from .dataset_io import MANIFEST_FILE, dataset_hash, export_csv, load, save
from .evaluation import (
    THRESHOLD_FRACTIONS,
    drop_table,
    localization_hit_rate,
    roc_points,
    threshold_metrics,
    timing_benchmark,
)
from .models import AttentionTransformer, AttnTransformerConfig, ScoreConfig, ScoreVariant, anomaly_scores, localize
from .models import train as train_transformer
from .numerics import set_debug
from .rng import parse_seed, splitmix64
from .simulator import generate_dataset
from .visualization import (
    generate_summary_report,
    plot_auc_by_stage,
    plot_roc_curves,
    plot_stage_examples,
    plot_training_history,
    timing_row,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3

METRICS_FILE = "metrics.csv"
TIMING_FILE = "timing.csv"
HISTORY_FILE = "history.csv"
SCORES_FILE = "scores.csv"
LOCALIZATION_TOLERANCE_S = 0.1


def setup_logging(verbose: bool = False, log_file: Optional[str] = None) -> None:
    """Configure logging with a console handler and an optional file handler."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, mode="a"))
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, Config.LOG_LEVEL),
        format=Config.LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


# -------------------------------
# Shared steps
# -------------------------------


def holdout_seed(seed: int) -> int:
    """Seed of the held-out set generated next to a training set."""
    return splitmix64(seed)


def gen_config(cfg: RunConfig, stage: int) -> GenConfig:
    spike, localdev = cfg.channel_probs()
    return GenConfig(
        stage=stage,
        anomaly_rate=cfg.anomaly_rate,
        spike_channel_probs=spike,
        localdev_channel_probs=localdev,
    )


def build_dataset(cfg: RunConfig, stage: int, n: int, seed: int) -> Dataset:
    return generate_dataset(stage, gen_config(cfg, stage), n, seed, workers=cfg.workers)


def train_model(cfg: RunConfig, model_kind: str, instances: Sequence[SignalInstance]):
    """Returns (model, profile); the CNN autoencoder has no profile."""
    if model_kind == "attn":
        model_cfg = AttnTransformerConfig(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            lr=cfg.lr,
            seed=cfg.seed,
            min_profile_instances=cfg.min_profile_instances,
        )
        return train_transformer(instances, model_cfg)
    model_cfg = CnnAEConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed)
    return cnn_ae_train(instances, model_cfg), None


def score_instances(model, profile, instances: Sequence[SignalInstance], variant: str, alpha: float,
                    batch_size: int = 32) -> np.ndarray:
    if isinstance(model, CnnAutoencoder):
        return cnn_ae_scores(instances, model, batch_size)
    return anomaly_scores(instances, model, profile, ScoreConfig(ScoreVariant(variant), alpha), batch_size)


def model_label(model_kind: str, variant: str) -> str:
    return "cnn-ae" if model_kind == "cnnae" else f"attn-transformer/{variant}"


def model_runs(cfg: RunConfig) -> List[Tuple[str, str]]:
    """(model, variant) pairs; the CNN autoencoder only has the reconstruction score."""
    runs = []
    for model_kind in cfg.models:
        variants = ["recon"] if model_kind == "cnnae" else cfg.variants
        runs.extend((model_kind, variant) for variant in variants)
    return runs


def write_history(model, directory: Path) -> None:
    if model.history is None:
        return
    losses = [model.history.initial_loss, *model.history.epoch_losses]
    pd.DataFrame({"epoch": range(len(losses)), "loss": losses}).to_csv(directory / HISTORY_FILE, index=False)


def stage_dir(out_dir: str, stage: int) -> Path:
    return Path(out_dir) / f"stage_{stage}"


def require_dataset(directory: Optional[str]) -> Dataset:
    if directory is None:
        raise FileNotFoundError("No dataset directory given (--data)")
    if not (Path(directory) / MANIFEST_FILE).exists():
        raise FileNotFoundError(f"No dataset found in {directory}")
    return load(directory)


# -------------------------------
# Subcommands
# -------------------------------


def cmd_gen(cfg: RunConfig, args: argparse.Namespace) -> int:
    for stage in cfg.stages:
        out = Path(cfg.out_dir) if len(cfg.stages) == 1 else stage_dir(cfg.out_dir, stage)
        dataset = build_dataset(cfg, stage, cfg.n, cfg.seed)
        save(dataset, out)
        if args.csv:
            export_csv(dataset, out / "instances.csv")
        write_run_config(cfg, str(out))
        print(f"stage {stage}: {len(dataset)} instances -> {out} ({dataset_hash(dataset)})")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = Path(cfg.out_dir)
    if cfg.data_dir is not None:
        instances = list(require_dataset(cfg.data_dir))
    else:
        instances = list(build_dataset(cfg, cfg.stages[0], cfg.n_train, cfg.seed))
    model, profile = train_model(cfg, cfg.models[0], instances)
    save_model(model, out, profile)
    write_history(model, out)
    plot_training_history(model.history, str(out))
    write_run_config(cfg, str(out))
    print(f"{model.kind} model trained on {len(instances)} instances -> {out / MODEL_FILE}")
    return EXIT_OK


def cmd_score(cfg: RunConfig, args: argparse.Namespace) -> int:
    if cfg.model_dir is None or not (Path(cfg.model_dir) / MODEL_FILE).exists():
        raise FileNotFoundError(f"No checkpoint found in {cfg.model_dir} (--model-dir)")
    model, profile = load_model(cfg.model_dir)
    dataset = require_dataset(cfg.data_dir)
    frame = pd.DataFrame({
        "instance_id": [inst.instance_id for inst in dataset],
        "label": dataset.labels(),
    })
    for variant in (["recon"] if isinstance(model, CnnAutoencoder) else cfg.variants):
        frame[f"score_{variant}"] = score_instances(model, profile, dataset.instances, variant, cfg.alpha,
                                                    cfg.batch_size)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out / SCORES_FILE, index=False)
    write_run_config(cfg, str(out))
    print(f"Scored {len(dataset)} instances -> {out / SCORES_FILE}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    """Train every model per stage, score a held-out set and write metrics, ROC tables and plots."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: List[Dict] = []
    examples: Dict[int, SignalInstance] = {}

    for stage in cfg.stages:
        train_set = build_dataset(cfg, stage, cfg.n_train, cfg.seed)
        test_set = build_dataset(cfg, stage, cfg.n_test, holdout_seed(cfg.seed))
        labels = test_set.labels()
        ids = [inst.instance_id for inst in test_set]
        examples[stage] = next((inst for inst in test_set if inst.label), test_set.instances[0])

        curves, roc_frames = {}, []
        for model_kind in cfg.models:
            model, profile = train_model(cfg, model_kind, train_set.instances)
            model_dir = stage_dir(cfg.out_dir, stage) / model_kind
            save_model(model, model_dir, profile)
            write_history(model, model_dir)
            write_run_config(cfg, str(model_dir))

            hit_rate = np.nan
            if isinstance(model, AttentionTransformer) and labels.any():
                hit_rate = localization_hit_rate(
                    localize(test_set.instances, model, profile, test_set.meta.sample_rate_hz),
                    test_set.instances,
                    LOCALIZATION_TOLERANCE_S,
                )

            for run_model, variant in model_runs(cfg):
                if run_model != model_kind:
                    continue
                label = model_label(model_kind, variant)
                scores = score_instances(model, profile, test_set.instances, variant, cfg.alpha, cfg.batch_size)
                curve = roc_points(scores, labels)
                curves[label] = curve
                roc_frames.append(curve.to_frame().assign(model=model_kind, variant=variant))
                row = {"stage": stage, "model": model_kind, "variant": variant, "auc": curve.auc,
                       "localization_hit_rate": hit_rate}
                for metric in threshold_metrics(scores, labels, THRESHOLD_FRACTIONS, ids).rows:
                    row[f"precision@{metric.q}"] = metric.precision
                    row[f"recall@{metric.q}"] = metric.recall
                    row[f"f1@{metric.q}"] = metric.f1
                rows.append(row)
                logger.info(f"Stage {stage} {label}: AUC {curve.auc:.4f}")

        pd.concat(roc_frames, ignore_index=True).to_csv(out / f"roc_{stage}.csv", index=False)
        plot_roc_curves(curves, stage, str(out))

    metrics = add_drops(pd.DataFrame(rows))
    metrics.to_csv(out / METRICS_FILE, index=False)
    plot_stage_examples(examples, str(out))
    write_run_config(cfg, str(out))
    print(f"Wrote {len(metrics)} metric rows -> {out / METRICS_FILE}")
    return EXIT_OK


def add_drops(metrics: pd.DataFrame) -> pd.DataFrame:
    """Per (model, variant): AUC delta against the previous stage, when stages are contiguous."""
    metrics = metrics.copy()
    metrics["drop"] = np.nan
    metrics["significant_drop"] = False
    for _, group in metrics.groupby(["model", "variant"], sort=False):
        try:
            table = drop_table(dict(zip(group["stage"], group["auc"])))
        except InvalidConfigError:
            continue
        by_stage = {row.stage: row for row in table.rows}
        for index, stage in zip(group.index, group["stage"]):
            row = by_stage[stage]
            metrics.loc[index, "drop"] = np.nan if row.delta is None else row.delta
            metrics.loc[index, "significant_drop"] = row.significant
    columns = ["stage", "model", "variant", "auc", "drop", "significant_drop"]
    return metrics[columns + [c for c in metrics.columns if c not in columns]]


def cmd_bench_time(cfg: RunConfig, args: argparse.Namespace) -> int:
    """
    Time inference on ``n_test`` instances per stage and model. Checkpoints left
    by ``eval`` in the output directory are reused; missing ones are trained first.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for stage in cfg.stages:
        test_set = build_dataset(cfg, stage, cfg.n_test, holdout_seed(cfg.seed))
        for model_kind in cfg.models:
            model_dir = stage_dir(cfg.out_dir, stage) / model_kind
            if (model_dir / MODEL_FILE).exists():
                model, profile = load_model(model_dir)
            else:
                model, profile = train_model(cfg, model_kind, build_dataset(cfg, stage, cfg.n_train, cfg.seed))
                save_model(model, model_dir, profile)
            variant = "recon" if model_kind == "cnnae" else cfg.variants[0]

            def scorer(batch, model=model, profile=profile, variant=variant):
                return score_instances(model, profile, batch, variant, cfg.alpha, cfg.batch_size)

            report = timing_benchmark(scorer, test_set.instances, cfg.batch_size)
            rows.append(timing_row(model_label(model_kind, variant), stage, report))

    pd.DataFrame(rows).to_csv(out / TIMING_FILE, index=False)
    write_run_config(cfg, str(out))
    print(f"Timed {len(rows)} model/stage pairs -> {out / TIMING_FILE}")
    return EXIT_OK


def cmd_report(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = Path(cfg.out_dir)
    metrics_path = out / METRICS_FILE
    if not metrics_path.exists():
        raise FileNotFoundError(f"No {METRICS_FILE} in {out}; run eval first")
    metrics = pd.read_csv(metrics_path)
    aucs_by_model: Dict[str, Dict[int, float]] = {}
    for (model_kind, variant), group in metrics.groupby(["model", "variant"], sort=False):
        aucs_by_model[model_label(model_kind, variant)] = dict(zip(group["stage"].astype(int), group["auc"]))

    timing_path = out / TIMING_FILE
    timings = pd.read_csv(timing_path).to_dict("records") if timing_path.exists() else None
    path = generate_summary_report(aucs_by_model, timings, str(out))
    plot_auc_by_stage(aucs_by_model, str(out))
    print(f"Report -> {path}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "bench-time": cmd_bench_time,
    "report": cmd_report,
}


# -------------------------------
# Argument parsing
# -------------------------------


def _seed(value: str) -> int:
    try:
        return parse_seed(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _probs(value: str) -> List[float]:
    try:
        return [float(p) for p in value.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated probabilities, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run-config file; flags override its values")
    common.add_argument("--stage", "--stages", dest="stages", type=int, nargs="+", help="Benchmark stage(s), 1-8")
    common.add_argument("--seed", type=_seed, help="Seed, decimal or 0x-hex")
    common.add_argument("--n", type=int, help="Instances to generate (gen)")
    common.add_argument("--n-train", type=int, help="Training instances")
    common.add_argument("--n-test", type=int, help="Test instances")
    common.add_argument("--model", dest="models", nargs="+", choices=MODEL_CHOICES)
    common.add_argument("--variant", dest="variants", nargs="+", choices=VARIANT_CHOICES)
    common.add_argument("--alpha", type=float, help="Attention weight of the combined score")
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--anomaly-rate", type=float)
    common.add_argument("--spike-probs", dest="spike_channel_probs", type=_probs, help="p1,...,p6 (stage 6+)")
    common.add_argument("--localdev-probs", dest="localdev_channel_probs", type=_probs, help="p1,...,p6 (stage 6+)")
    common.add_argument("--workers", type=int, help="Generator worker processes")
    common.add_argument("--min-profile-instances", type=int)
    common.add_argument("--out", dest="out_dir", help=f"Output directory (default {Config.OUTPUT_ROOT})")
    common.add_argument("--data", dest="data_dir", help="Dataset directory written by gen")
    common.add_argument("--model-dir", help="Checkpoint directory written by train")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    common.add_argument("--log-file", help="Also append logs to this file")

    parser = argparse.ArgumentParser(
        prog="ishm-bench",
        description="Synthetic rail-vibration anomaly detection benchmark",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="Generate benchmark datasets").add_argument(
        "--csv", action="store_true", help="Also export instances.csv"
    )
    sub.add_parser("train", parents=[common], help="Train one model on one stage")
    sub.add_parser("score", parents=[common], help="Score a dataset with a trained model")
    sub.add_parser("eval", parents=[common], help="Train, score and evaluate per stage")
    sub.add_parser("bench-time", parents=[common], help="Benchmark inference time")
    sub.add_parser("report", parents=[common], help="Render the markdown report")
    return parser


_OVERRIDE_KEYS = (
    "stages", "seed", "n", "n_train", "n_test", "models", "variants", "alpha", "epochs", "batch_size",
    "lr", "anomaly_rate", "workers", "min_profile_instances", "out_dir", "data_dir", "model_dir",
    "spike_channel_probs", "localdev_channel_probs",
)


def run_pipeline(args: argparse.Namespace) -> int:
    """Resolve the run config and dispatch; errors become exit codes with a one-line diagnostic."""
    try:
        file_values = load_config_file(args.config) if args.config else {}
        overrides = {key: getattr(args, key) for key in _OVERRIDE_KEYS}
        overrides["command"] = args.command
        cfg = resolve_run_config(file_values, overrides)
        set_debug(Config.DEBUG_NUMERICS)
        return COMMANDS[args.command](cfg, args)

    except (InvalidConfigError, InvalidParameterError, InvalidDistributionError) as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ProfileMissingError) as e:
        logger.error(f"Missing input: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as e:
        logger.error(f"Error running {args.command}: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    setup_logging(args.verbose, args.log_file)
    return run_pipeline(args)


if __name__ == "__main__":
    sys.exit(main())

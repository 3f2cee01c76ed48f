import logging
import os
from typing import Dict, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402
from tabulate import tabulate  # noqa: E402

from .core import STAGE_NAMES, SignalInstance, count_random_variables  # noqa: E402
from .evaluation import RocCurve, TimingReport, auc_table_markdown  # noqa: E402
from .models import TrainingHistory  # noqa: E402

logger = logging.getLogger(__name__)

sns.set_theme(style="whitegrid")


def plot_roc_curves(curves: Mapping[str, RocCurve], stage: int, output_dir: str = "data/outputs") -> str:
    """
    ROC curves of several models on one stage, with the chance diagonal.

    Args:
        curves: Model label -> ROC curve
        stage: Benchmark stage the curves were measured on
        output_dir: Directory to save output plot

    Returns:
        Path of the written SVG
    """
    try:
        plt.figure(figsize=(6, 6))
        for name, curve in curves.items():
            plt.step(curve.fpr, curve.tpr, where="post", label=f"{name} (AUC {curve.auc:.3f})")
        plt.plot([0, 1], [0, 1], "k--", alpha=0.4)
        plt.xlabel("False positive rate")
        plt.ylabel("True positive rate")
        plt.title(f"ROC, Step {stage}: {STAGE_NAMES.get(stage, '')}")
        plt.legend(loc="lower right")
        plt.tight_layout()

        os.makedirs(output_dir, exist_ok=True)
        path = os.path.join(output_dir, f"roc_{stage}.svg")
        plt.savefig(path, format="svg")
        plt.close()
        return path

    except Exception as e:
        logger.error(f"Error plotting ROC curves: {str(e)}")
        plt.close()
        raise


def plot_stage_examples(
    examples: Mapping[int, SignalInstance],
    output_dir: str = "data/outputs",
    sample_rate_hz: float = 100.0,
) -> str:
    """
    One panel per stage with every channel of an example window; the injected
    anomaly interval is shaded.
    """
    try:
        stages = sorted(examples)
        fig, axes = plt.subplots(len(stages), 1, figsize=(12, 2.4 * len(stages)), squeeze=False)
        for ax, stage in zip(axes[:, 0], stages):
            inst = examples[stage]
            t = np.arange(inst.data.shape[1]) / sample_rate_hz
            for channel, row in enumerate(inst.data):
                ax.plot(t, row, linewidth=0.8, label=f"ch {channel}")
            if inst.anomaly is not None:
                end = max(inst.anomaly.t_end, inst.anomaly.t + 1.0 / sample_rate_hz)
                ax.axvspan(inst.anomaly.t, end, color="red", alpha=0.25)
            ax.set_title(
                f"Step {stage}: {STAGE_NAMES.get(stage, '')} "
                f"({count_random_variables(stage)} random variables)",
                fontsize=10,
            )
            ax.set_xlim(t[0], t[-1])
        axes[-1, 0].set_xlabel("Time (s)")
        fig.tight_layout()

        os.makedirs(output_dir, exist_ok=True)
        path = os.path.join(output_dir, "stage_examples.svg")
        fig.savefig(path, format="svg")
        plt.close(fig)
        return path

    except Exception as e:
        logger.error(f"Error plotting stage examples: {str(e)}")
        plt.close("all")
        raise


def plot_auc_by_stage(aucs_by_model: Mapping[str, Dict[int, float]], output_dir: str = "data/outputs") -> str:
    try:
        frame = pd.DataFrame(
            [(model, stage, value) for model, aucs in aucs_by_model.items() for stage, value in aucs.items()],
            columns=["model", "stage", "auc"],
        )
        plt.figure(figsize=(10, 5))
        sns.lineplot(data=frame, x="stage", y="auc", hue="model", marker="o")
        plt.xticks(sorted(frame["stage"].unique()))
        plt.xlabel("Benchmark step")
        plt.ylabel("AUC")
        plt.title("AUC across incremental benchmark steps")
        plt.tight_layout()

        os.makedirs(output_dir, exist_ok=True)
        path = os.path.join(output_dir, "auc_by_stage.svg")
        plt.savefig(path, format="svg")
        plt.close()
        return path

    except Exception as e:
        logger.error(f"Error plotting AUC by stage: {str(e)}")
        plt.close()
        raise


def plot_training_history(history: TrainingHistory, output_dir: str = "data/outputs") -> str:
    try:
        plt.figure(figsize=(8, 4))
        epochs = np.arange(len(history.epoch_losses) + 1)
        plt.plot(epochs, [history.initial_loss, *history.epoch_losses], marker=".")
        plt.yscale("log")
        plt.xlabel("Epoch")
        plt.ylabel("Reconstruction MSE")
        plt.title("Training loss")
        plt.tight_layout()

        os.makedirs(output_dir, exist_ok=True)
        path = os.path.join(output_dir, "training_loss.svg")
        plt.savefig(path, format="svg")
        plt.close()
        return path

    except Exception as e:
        logger.error(f"Error plotting training history: {str(e)}")
        plt.close()
        raise


def generate_summary_report(
    aucs_by_model: Mapping[str, Dict[int, float]],
    timings: Optional[Sequence[Dict]] = None,
    output_dir: str = "data/outputs",
) -> str:
    """
    Write ``report.md``: the per-stage AUC table with drop rows and, when
    timing results exist, the inference-time table.

    Args:
        aucs_by_model: Model label -> {stage: AUC}
        timings: Rows with at least ``model``, ``stage``, ``instances``, ``batch_size``
            and ``total_seconds``
        output_dir: Directory to save the report

    Returns:
        Path of the written report
    """
    try:
        lines = ["# Anomaly detection benchmark report", "", "## AUC by stage", ""]
        lines.append(auc_table_markdown(dict(aucs_by_model)))
        lines += ["", "Bold drops are decreases of 0.02 AUC or more.", ""]

        if timings:
            lines += ["## Inference time (seconds)", ""]
            frame = pd.DataFrame(list(timings))
            table = frame.pivot_table(index="model", columns="stage", values="total_seconds")
            table.columns = [f"Step {s}" for s in table.columns]
            lines.append(tabulate(table.reset_index(), headers="keys", tablefmt="pipe",
                                  showindex=False, floatfmt=".2f"))
            first = frame.iloc[0]
            lines += ["", f"{int(first['instances'])} instances, batch size {int(first['batch_size'])}.", ""]

        os.makedirs(output_dir, exist_ok=True)
        path = os.path.join(output_dir, "report.md")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines))
        return path

    except Exception as e:
        logger.error(f"Error generating summary report: {str(e)}")
        raise


def timing_row(model: str, stage: int, report: TimingReport) -> Dict:
    return {"model": model, "stage": stage, **report.to_dict()}

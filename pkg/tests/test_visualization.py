import numpy as np

from ishm_bench.core import GenConfig
from ishm_bench.evaluation import TimingReport, roc_points
from ishm_bench.models import TrainingHistory
from ishm_bench.simulator import generate_instance
from ishm_bench.visualization import (
    generate_summary_report,
    plot_auc_by_stage,
    plot_roc_curves,
    plot_stage_examples,
    plot_training_history,
    timing_row,
)


def test_plots_are_written_as_svg(tmp_path):
    labels = np.array([False, True, False, True, False])
    curve = roc_points([0.1, 0.9, 0.3, 0.4, 0.2], labels)
    outputs = [
        plot_roc_curves({"attn-transformer/attn": curve}, 2, str(tmp_path)),
        plot_auc_by_stage({"cnn-ae": {1: 0.9, 2: 0.85}}, str(tmp_path)),
        plot_training_history(TrainingHistory(initial_loss=1.0, epoch_losses=[0.5, 0.25]), str(tmp_path)),
    ]
    for path in outputs:
        assert path.endswith(".svg")
        assert "<svg" in open(path, encoding="utf-8").read()


def test_stage_examples_panel_per_stage(tmp_path):
    """Anomalous and normal examples both render"""
    examples = {
        1: generate_instance(1, GenConfig(anomaly_rate=1.0), dataset_seed=1, instance_id=0),
        5: generate_instance(5, GenConfig(stage=5, anomaly_rate=0.0), dataset_seed=1, instance_id=0),
    }
    path = plot_stage_examples(examples, str(tmp_path))
    text = open(path, encoding="utf-8").read()
    assert path.endswith("stage_examples.svg")
    assert "<svg" in text


def test_summary_report_with_timing(tmp_path):
    report = TimingReport(total_seconds=1.5, instances=3000, batch_size=32, n_batches=94,
                          batch_mean=0.016, batch_std=0.001)
    timings = [timing_row("cnn-ae", 1, report), timing_row("cnn-ae", 2, report)]
    path = generate_summary_report({"cnn-ae": {1: 0.95, 2: 0.90}}, timings, str(tmp_path))
    text = open(path, encoding="utf-8").read()
    assert "## AUC by stage" in text
    assert "**(-0.050)**" in text
    assert "## Inference time (seconds)" in text
    assert "1.50" in text
    assert "3000 instances, batch size 32." in text

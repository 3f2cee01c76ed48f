"""
Evaluation protocol: ROC/AUC, top-q threshold metrics, per-stage drop tables,
localization hit rate and inference timing.
"""
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tabulate import tabulate

from .core import (
    STAGE_NAMES,
    InvalidConfigError,
    InvalidParameterError,
    ShapeMismatchError,
    SignalInstance,
    UndefinedAUCError,
)

logger = logging.getLogger(__name__)

THRESHOLD_FRACTIONS = (0.005, 0.01, 0.015, 0.02, 0.10, 0.20, 0.30)
SIGNIFICANT_DROP = -0.02
DROP_DECIMALS = 3


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.ndim != 1 or s.shape != y.shape:
        raise ShapeMismatchError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise UndefinedAUCError("AUC needs at least one positive and one negative label")
    return s, y, n_pos, len(y) - n_pos


# -------------------------------
# ROC / AUC
# -------------------------------


def auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """
    Mann-Whitney AUC: P(score+ > score-) + 0.5 * P(tie), from average ranks.

    Raises:
        UndefinedAUCError: If only one class is present
    """
    s, y, n_pos, n_neg = _as_arrays(scores, labels)
    ranks = pd.Series(s).rank(method="average").to_numpy()
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_frame(self) -> pd.DataFrame:
        # the (0, 0) point has no threshold
        return pd.DataFrame({
            "threshold": np.concatenate([[np.inf], self.thresholds]),
            "fpr": self.fpr,
            "tpr": self.tpr,
        })


def trapezoid_area(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def roc_points(scores: Sequence[float], labels: Sequence[bool]) -> RocCurve:
    """Threshold sweep over the unique scores, highest first; tied scores move together."""
    s, y, n_pos, n_neg = _as_arrays(scores, labels)
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    # last index of every run of equal scores
    boundaries = np.r_[np.nonzero(np.diff(s_sorted))[0], len(s_sorted) - 1]
    tp = np.cumsum(y_sorted)[boundaries]
    fp = np.cumsum(~y_sorted)[boundaries]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=s_sorted[boundaries], auc=trapezoid_area(fpr, tpr))


# -------------------------------
# Threshold metrics
# -------------------------------


@dataclass(frozen=True)
class ThresholdMetrics:
    q: float
    flagged: int
    precision: float
    recall: float
    f1: float


@dataclass
class MetricsReport:
    rows: List[ThresholdMetrics] = field(default_factory=list)

    def __getitem__(self, q: float) -> ThresholdMetrics:
        for row in self.rows:
            if math.isclose(row.q, q):
                return row
        raise KeyError(q)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows])


def flagged_count(q: float, n: int) -> int:
    """round(q * n) with halves rounded up."""
    return int(math.floor(q * n + 0.5))


def threshold_metrics(
    scores: Sequence[float],
    labels: Sequence[bool],
    q_list: Sequence[float] = THRESHOLD_FRACTIONS,
    ids: Optional[Sequence[int]] = None,
) -> MetricsReport:
    """
    Flag the top round(q * n) scores as anomalous for every q and score the
    flags against the labels. Ties go to the higher score, then the lower id.
    """
    if len(q_list) == 0:
        raise InvalidParameterError("q_list must not be empty")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise ShapeMismatchError(f"scores {s.shape} and labels {y.shape} differ in length")
    instance_ids = np.arange(len(s)) if ids is None else np.asarray(ids)
    order = np.lexsort((instance_ids, -s))
    n_pos = int(y.sum())

    report = MetricsReport()
    for q in q_list:
        if not 0.0 < q <= 1.0:
            raise InvalidParameterError(f"Threshold fraction must lie in (0, 1], got {q}")
        k = flagged_count(q, len(s))
        tp = int(y[order[:k]].sum())
        precision = tp / k if k else 0.0
        recall = tp / n_pos if n_pos else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        report.rows.append(ThresholdMetrics(q=q, flagged=k, precision=precision, recall=recall, f1=f1))
    return report


# -------------------------------
# Drop table
# -------------------------------


@dataclass(frozen=True)
class StageDrop:
    stage: int
    auc: float
    delta: Optional[float]
    significant: bool

    @property
    def label(self) -> str:
        """Drop column text: "(-0.127)", or "(--)" when the AUC did not fall."""
        if self.delta is None:
            return ""
        return "(--)" if self.delta >= 0 else f"({self.delta:.3f})"


@dataclass
class DropTable:
    rows: List[StageDrop]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows])

    def significant_stages(self) -> List[int]:
        return [row.stage for row in self.rows if row.significant]


def drop_table(auc_by_stage: Dict[int, float]) -> DropTable:
    """
    AUC change of every stage against the previous one, rounded to three
    decimals; changes of -0.02 or worse are flagged.

    Raises:
        InvalidConfigError: If the stages are empty or not contiguous
    """
    stages = sorted(auc_by_stage)
    if not stages or stages != list(range(stages[0], stages[0] + len(stages))):
        raise InvalidConfigError(f"Stages must be contiguous, got {stages}")
    rows = []
    previous = None
    for stage in stages:
        value = float(auc_by_stage[stage])
        delta = None if previous is None else round(value - previous, DROP_DECIMALS)
        rows.append(StageDrop(stage, value, delta, delta is not None and delta <= SIGNIFICANT_DROP))
        previous = value
    return DropTable(rows)


def auc_table_markdown(aucs_by_model: Dict[str, Dict[int, float]]) -> str:
    """
    One column per model, one AUC row per stage followed by its drop row.

    Significant drops are set in bold.
    """
    tables = {name: {row.stage: row for row in drop_table(aucs).rows} for name, aucs in aucs_by_model.items()}
    stages = sorted({stage for table in tables.values() for stage in table})
    headers = ["Stage", "Model", *tables]
    rows = []
    for stage in stages:
        rows.append([
            f"Step {stage}",
            STAGE_NAMES.get(stage, ""),
            *(f"{t[stage].auc:.3f}" if stage in t else "" for t in tables.values()),
        ])
        if stage == stages[0]:
            continue
        drops = []
        for table in tables.values():
            row = table.get(stage)
            text = row.label if row is not None else ""
            drops.append(f"**{text}**" if row is not None and row.significant else text)
        rows.append(["", "(Drop)", *drops])
    return tabulate(rows, headers=headers, tablefmt="pipe")


# -------------------------------
# Localization
# -------------------------------


def localization_hit_rate(
    localizations: Sequence,
    instances: Sequence[SignalInstance],
    tolerance_s: float = 0.0,
) -> float:
    """
    Fraction of anomalous instances whose most divergent token window overlaps
    the injected anomaly, widened by ``tolerance_s`` on both sides.
    """
    if len(localizations) != len(instances):
        raise ShapeMismatchError(
            f"{len(localizations)} localizations for {len(instances)} instances"
        )
    if tolerance_s < 0:
        raise InvalidParameterError(f"tolerance_s must be >= 0, got {tolerance_s}")
    hits, total = 0, 0
    for loc, inst in zip(localizations, instances):
        if inst.anomaly is None:
            continue
        total += 1
        if loc.t_start - tolerance_s <= inst.anomaly.t_end and inst.anomaly.t <= loc.t_end + tolerance_s:
            hits += 1
    if total == 0:
        raise InvalidParameterError("No anomalous instances to localize")
    return hits / total


# -------------------------------
# Timing
# -------------------------------

Scorer = Callable[[Sequence[SignalInstance]], np.ndarray]


@dataclass(frozen=True)
class TimingReport:
    total_seconds: float
    instances: int
    batch_size: int
    n_batches: int
    batch_mean: float
    batch_std: float

    def to_dict(self) -> Dict:
        return asdict(self)


def timing_benchmark(
    scorer: Scorer,
    instances: Sequence[SignalInstance],
    batch_size: int = 32,
) -> TimingReport:
    """
    Wall-clock of scoring ``instances`` in sequential batches.

    One untimed warm-up batch runs first. Data and model must already be in memory.
    """
    if batch_size < 1:
        raise InvalidParameterError(f"batch_size must be positive, got {batch_size}")
    data = list(instances)
    if not data:
        raise InvalidParameterError("Nothing to time: no instances")
    scorer(data[:batch_size])

    durations = []
    for lo in range(0, len(data), batch_size):
        start = time.perf_counter()
        scorer(data[lo:lo + batch_size])
        durations.append(time.perf_counter() - start)

    durations = np.asarray(durations)
    report = TimingReport(
        total_seconds=float(durations.sum()),
        instances=len(data),
        batch_size=batch_size,
        n_batches=len(durations),
        batch_mean=float(durations.mean()),
        batch_std=float(durations.std()),
    )
    logger.info(
        f"Scored {report.instances} instances in {report.n_batches} batches: "
        f"{report.total_seconds:.3f}s"
    )
    return report

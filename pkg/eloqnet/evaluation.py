"""
Localization metrics.

Per task and patient: accuracy on the eloquent class, overall accuracy, and
the area under the ROC curve for detecting eloquent regions (eloquent
against tumor and background pooled). Fold values average patients with
equal weight; cross-validation summaries average folds where a metric is
defined.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata, spearmanr
from tabulate import tabulate

from . import diffcore as dc
from .errors import ConfigError, DimensionError
from .model import (
    NUM_CLASSES,
    TASKS,
    ModelConfig,
    ModelState,
    NodeClass,
    Task,
    aggregate_scores,
    forward,
    predict_labels,
)

logger = logging.getLogger("eloqnet.evaluation")


@dataclass
class TaskMetrics:
    """Metrics of one task on one patient.

    Attributes:
        eloquent_accuracy: Correct among truly eloquent regions; None when
            the patient has no eloquent region for the task.
        overall_accuracy: Correct among all regions.
        auc: ROC area for the eloquent class; None when there are no
            positive or no negative regions.
        confusion: Counts with rows = truth, columns = prediction.
    """

    eloquent_accuracy: Optional[float]
    overall_accuracy: float
    auc: Optional[float]
    confusion: np.ndarray

    def as_record(self) -> dict:
        return {
            "eloquent_accuracy": self.eloquent_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "auc": self.auc,
            "confusion": self.confusion.tolist(),
        }


@dataclass
class MetricSummary:
    """Mean metrics over patients (in a fold) or folds (in a CV run).

    Attributes:
        eloquent_accuracy: Mean over the members where it is defined.
        overall_accuracy: Mean over all members.
        auc: Mean over the members where it is defined.
        count: Members where the task is defined.
        auc_count: Members averaged for the AUC.
    """

    eloquent_accuracy: Optional[float]
    overall_accuracy: float
    auc: Optional[float]
    count: int
    auc_count: int

    def as_record(self) -> dict:
        return {
            "eloquent_accuracy": self.eloquent_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "auc": self.auc,
            "count": self.count,
            "auc_count": self.auc_count,
        }


@dataclass
class PatientResult:
    """Predictions, metrics and attention of one evaluated patient."""

    patient_id: str
    predictions: dict[Task, np.ndarray]
    aggregated: dict[Task, np.ndarray]
    attention_language: np.ndarray
    attention_motor: np.ndarray
    metrics: dict[Task, TaskMetrics] = field(default_factory=dict)

    def right_hemisphere_eloquent(self, task: Task = Task.LANGUAGE) -> list[int]:
        """Regions in the right half of the index range predicted eloquent."""
        predicted = self.predictions[Task(task)]
        half = predicted.shape[0] // 2
        return [
            int(i) for i in np.flatnonzero(predicted == NodeClass.ELOQUENT) if i >= half
        ]

    def as_record(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "metrics": {str(t): m.as_record() for t, m in self.metrics.items()},
            "predictions": {str(t): p.tolist() for t, p in self.predictions.items()},
            "scores": {str(t): s.tolist() for t, s in self.aggregated.items()},
        }


def eloquent_auc(scores: np.ndarray, positive: np.ndarray) -> Optional[float]:
    """ROC area from the rank sum, tied scores sharing their mean rank.

    Returns None when one of the two groups is empty.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def compute_metrics(
    predicted: np.ndarray, scores: np.ndarray, truth: np.ndarray
) -> TaskMetrics:
    """Metrics of one task.

    Args:
        predicted: Class id per region.
        scores: ``(N, 3)`` aggregated scores; column 0 ranks eloquence.
        truth: ``(N, 3)`` one-hot labels.

    Raises:
        ConfigError: If there are no regions.
        DimensionError: If shapes disagree.
    """
    predicted = np.asarray(predicted, dtype=int)
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    N = predicted.shape[0]
    if N == 0:
        raise ConfigError("Cannot compute metrics on zero regions")
    if scores.shape != (N, NUM_CLASSES) or truth.shape != (N, NUM_CLASSES):
        raise DimensionError(
            f"Shapes disagree: predicted {predicted.shape}, scores {scores.shape}, "
            f"truth {truth.shape}"
        )

    true_classes = np.argmax(truth, axis=1)
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=int)
    np.add.at(confusion, (true_classes, predicted), 1)

    eloquent = true_classes == NodeClass.ELOQUENT
    eloquent_accuracy = (
        float(np.mean(predicted[eloquent] == NodeClass.ELOQUENT))
        if eloquent.any()
        else None
    )
    return TaskMetrics(
        eloquent_accuracy=eloquent_accuracy,
        overall_accuracy=float(np.trace(confusion) / N),
        auc=eloquent_auc(scores[:, NodeClass.ELOQUENT], eloquent),
        confusion=confusion,
    )


def _mean(values: Iterable[Optional[float]]) -> tuple[Optional[float], int]:
    defined = [v for v in values if v is not None]
    return (float(np.mean(defined)) if defined else None), len(defined)


def summarize(members: Sequence) -> Optional[MetricSummary]:
    """Average TaskMetrics or MetricSummary objects; None members are skipped.

    Returns None when nothing is defined.
    """
    members = [m for m in members if m is not None]
    if not members:
        return None
    eloquent, _ = _mean(m.eloquent_accuracy for m in members)
    auc, auc_count = _mean(m.auc for m in members)
    return MetricSummary(
        eloquent_accuracy=eloquent,
        overall_accuracy=float(np.mean([m.overall_accuracy for m in members])),
        auc=auc,
        count=len(members),
        auc_count=auc_count,
    )


def average_patient_metrics(
    results: Sequence[PatientResult],
) -> dict[Task, Optional[MetricSummary]]:
    """Equal-weight average over patients, per task.

    Patients without labels for a task do not count for it.
    """
    return {
        task: summarize([r.metrics.get(task) for r in results]) for task in TASKS
    }


def aggregate_cv(
    per_fold: Sequence[dict[Task, Optional[MetricSummary]]],
) -> dict[Task, Optional[MetricSummary]]:
    """Mean over folds where each metric is defined.

    ``count`` and ``auc_count`` report how many folds entered each mean.
    Tasks without a defined fold map to None (absent), never to zero.
    """
    return {task: summarize([fold.get(task) for fold in per_fold]) for task in TASKS}


def evaluate_patient(
    state: ModelState,
    cfg: ModelConfig,
    patient_id: str,
    connectivity,
    labels,
) -> PatientResult:
    """Run the network on one patient and score every present task."""
    with dc.no_grad():
        outputs = forward(connectivity, cfg, state)
        aggregated = aggregate_scores(outputs)
    predictions = predict_labels(aggregated)
    language, motor = outputs.attention.numpy()
    result = PatientResult(
        patient_id=patient_id,
        predictions=predictions,
        aggregated={t: s.value.copy() for t, s in aggregated.items()},
        attention_language=language.copy(),
        attention_motor=motor.copy(),
    )
    for task in labels.present_tasks:
        result.metrics[task] = compute_metrics(
            predictions[task], result.aggregated[task], labels.labels[task]
        )
    return result


def spearman(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    """Spearman rank correlation, None when undefined (constant input)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(spearmanr(x, y).statistic)


@dataclass
class AttentionAlignment:
    """Agreement of learned attention with the true window synchrony."""

    language: Optional[float]
    motor: Optional[float]
    language_motor: Optional[float]
    patients: int


def eval_attention(
    results: Sequence[PatientResult],
    synchrony: dict[str, dict[str, np.ndarray]],
) -> AttentionAlignment:
    """Mean Spearman correlation of attention with window synchrony.

    Args:
        results: Evaluated patients.
        synchrony: Patient id to ``{"language": ..., "motor": ...}`` per-window
            synchrony.
    """
    lang, motor, cross = [], [], []
    for r in results:
        sync = synchrony.get(r.patient_id)
        if sync is None:
            continue
        lang.append(spearman(r.attention_language, sync["language"]))
        motor.append(spearman(r.attention_motor, sync["motor"]))
        cross.append(spearman(r.attention_language, r.attention_motor))
    return AttentionAlignment(
        language=_mean(lang)[0],
        motor=_mean(motor)[0],
        language_motor=_mean(cross)[0],
        patients=len(lang),
    )


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def summary_table(summary: dict[Task, Optional[MetricSummary]]) -> str:
    """Render a per-task summary with tabulate."""
    rows = []
    for task in TASKS:
        s = summary.get(task)
        if s is None:
            rows.append([str(task), "absent", "absent", "absent", 0])
            continue
        rows.append(
            [
                str(task),
                _fmt(s.eloquent_accuracy),
                _fmt(s.overall_accuracy),
                _fmt(s.auc),
                s.count,
            ]
        )
    return tabulate(
        rows,
        headers=["Task", "Eloquent acc.", "Overall acc.", "AUC", "N"],
        tablefmt="fancy_grid",
    )

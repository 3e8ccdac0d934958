"""
Risk-sensitive multi-task cross-entropy.

For every task with labels, the attention-aggregated scores are penalised
with ``-delta[c] * log(sigma(S[n, c])) * Y[n, c]`` summed over regions and
classes. Tasks without labels contribute nothing and their heads are left
out of the graph, so their parameters get exactly zero gradient.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, DimensionError, EmptySupervisionError, LabelError
from .model import NUM_CLASSES, TASKS, HeadOutputs, NodeClass, Task, aggregate_scores

logger = logging.getLogger("eloqnet.loss")

DEFAULT_DELTA_LANGUAGE = (2.25, 0.5, 0.2)
DEFAULT_DELTA_MOTOR = (1.5, 0.5, 0.2)


class LossMode(str, Enum):
    """How class scores become probabilities before the log.

    LITERAL: independent sigmoid per class score.
    SOFTMAX_CE: softmax over the three class scores of a region.
    """

    def __str__(self):
        return str(self.value)

    def __repr__(self):
        return str(self)

    LITERAL = "literal"
    SOFTMAX_CE = "softmax-ce"


@dataclass(frozen=True)
class RiskWeights:
    """Per-class penalties, indexed eloquent, tumor, background."""

    language: tuple = DEFAULT_DELTA_LANGUAGE
    motor: tuple = DEFAULT_DELTA_MOTOR

    def __post_init__(self):
        for name in ("language", "motor"):
            delta = tuple(float(v) for v in getattr(self, name))
            if len(delta) != NUM_CLASSES or min(delta) <= 0:
                raise ConfigError(f"delta_{name} must be 3 positive values: {delta}")
            object.__setattr__(self, name, delta)

    def for_task(self, task: Task) -> np.ndarray:
        language = Task(task).system == "language"
        return np.array(self.language if language else self.motor)


@dataclass
class LabelTensor:
    """One-hot ground truth of the tasks a patient performed.

    Attributes:
        regions: Number of regions N.
        labels: Task to ``(N, 3)`` one-hot matrix; absent tasks are missing.
    """

    regions: int
    labels: dict[Task, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        checked = {}
        for task, Y in self.labels.items():
            Y = np.array(Y, dtype=np.float64)
            _check_one_hot(Y, self.regions, task)
            Y.flags.writeable = False
            checked[Task(task)] = Y
        self.labels = {t: checked[t] for t in TASKS if t in checked}

    @classmethod
    def from_regions(
        cls,
        regions: int,
        eloquent: Mapping[Task, list],
        tumor: list,
    ) -> "LabelTensor":
        """Build labels from eloquent region lists and the tumor regions.

        Tumor regions are labeled tumor in every present task, everything
        else not eloquent is background.
        """
        labels = {}
        tumor = set(int(i) for i in tumor)
        for task, indices in eloquent.items():
            classes = np.full(regions, int(NodeClass.BACKGROUND))
            classes[list(indices)] = int(NodeClass.ELOQUENT)
            classes[sorted(tumor)] = int(NodeClass.TUMOR)
            labels[Task(task)] = np.eye(NUM_CLASSES)[classes]
        return cls(regions=regions, labels=labels)

    @property
    def present_tasks(self) -> tuple:
        return tuple(self.labels)

    def is_present(self, task: Task) -> bool:
        return Task(task) in self.labels

    def classes(self, task: Task) -> np.ndarray:
        """Class id per region for a present task."""
        return np.argmax(self.labels[Task(task)], axis=1)

    def eloquent_regions(self, task: Task) -> list[int]:
        eloquent = self.classes(task) == NodeClass.ELOQUENT
        return [int(i) for i in np.flatnonzero(eloquent)]

    def validate_mask(self, mask_indices) -> None:
        """Check that masked regions carry the tumor class in every task."""
        idx = sorted(int(i) for i in mask_indices)
        for task in self.labels:
            wrong = [i for i in idx if self.classes(task)[i] != NodeClass.TUMOR]
            if wrong:
                raise LabelError(
                    f"Masked regions {wrong} are not labeled tumor for {task}"
                )


@dataclass
class LossBreakdown:
    """Total loss tensor and the value of each task term."""

    total: Tensor
    per_task: dict[Task, float]

    @property
    def value(self) -> float:
        return self.total.item()


def _check_one_hot(Y: np.ndarray, regions: int, task=None) -> None:
    where = f" for {task}" if task is not None else ""
    if Y.shape != (regions, NUM_CLASSES):
        raise LabelError(f"Labels{where} must have shape ({regions}, 3), got {Y.shape}")
    if not (np.isin(Y, (0.0, 1.0)).all() and np.all(Y.sum(axis=1) == 1.0)):
        raise LabelError(f"Labels{where} are not one-hot")


def task_loss(
    aggregated: Tensor,
    Y: np.ndarray,
    delta: np.ndarray,
    mode: LossMode = LossMode.LITERAL,
) -> Tensor:
    """Risk-weighted cross-entropy of one task.

    Args:
        aggregated: ``(N, 3)`` attention-aggregated scores.
        Y: ``(N, 3)`` one-hot labels.
        delta: Three class penalties.
        mode: Sigmoid per score (literal) or softmax over the classes.

    Returns:
        Tensor: Scalar loss, summed over regions.

    Raises:
        LabelError: If ``Y`` is not one-hot.
    """
    Y = np.asarray(Y, dtype=np.float64)
    _check_one_hot(Y, aggregated.shape[0])
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (NUM_CLASSES,):
        raise DimensionError(f"delta must have 3 entries, got {delta.shape}")

    if LossMode(mode) == LossMode.LITERAL:
        log_p = dc.log_sigmoid(aggregated)
    else:
        log_p = dc.log_softmax_over_axis(aggregated, axis=1)
    weights = Tensor(Y * delta[None, :])
    return -dc.sum(dc.mul(log_p, weights))


def total_loss(
    outputs: HeadOutputs,
    labels: LabelTensor,
    weights: RiskWeights = RiskWeights(),
    mode: LossMode = LossMode.LITERAL,
    tasks: Optional[tuple] = None,
) -> LossBreakdown:
    """Sum of the task losses of every present task.

    Args:
        outputs: Network outputs of one scan.
        labels: Ground truth; absent tasks are skipped.
        weights: Class penalties.
        mode: Loss mode.
        tasks: Restrict to these tasks (e.g. language only). All by default.

    Raises:
        EmptySupervisionError: If no task has labels.
    """
    present = [
        t
        for t in (TASKS if tasks is None else [Task(x) for x in tasks])
        if labels.is_present(t) and t in outputs.scores
    ]
    if not present:
        raise EmptySupervisionError("All tasks are absent; nothing to supervise")

    aggregated = aggregate_scores(outputs, tuple(present))
    terms = {
        task: task_loss(
            aggregated[task], labels.labels[task], weights.for_task(task), mode
        )
        for task in present
    }
    total = terms[present[0]]
    for task in present[1:]:
        total = total + terms[task]
    return LossBreakdown(
        total=total, per_task={task: term.item() for task, term in terms.items()}
    )

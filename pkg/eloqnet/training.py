"""
Optimizer, training loop and k-fold cross-validation.

Training is full batch by default: every epoch accumulates the mean loss
gradient over all patients before one SGD-with-momentum step. Heads of
tasks that no patient in a batch performed are frozen for that step, so a
task missing from the whole cohort leaves its head exactly at its
initialisation.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .connectivity import DynamicConnectivity, TimeSeries, TumorMask, WindowConfig
from .diffcore import ComputeGraph, Tensor
from .errors import ConfigError, DivergenceError
from .evaluation import (
    MetricSummary,
    PatientResult,
    aggregate_cv,
    average_patient_metrics,
    evaluate_patient,
)
from .loss import LabelTensor, LossMode, RiskWeights, total_loss
from .model import (
    ModelConfig,
    ModelState,
    Task,
    Variant,
    build_variant,
    forward,
    prepare_connectivity,
)
from .utils import derive_seed

logger = logging.getLogger("eloqnet.training")

DEFAULT_LEARNING_RATE = 0.002
DEFAULT_MOMENTUM = 0.9
DEFAULT_WEIGHT_DECAY = 5e-5
DEFAULT_EPOCHS = 300
DEFAULT_FOLDS = 8


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and protocol settings.

    Attributes:
        learning_rate: SGD step size.
        momentum: Velocity decay; 0 gives plain gradient descent.
        weight_decay: L2 coefficient added to the gradient of weights.
        epochs: Passes over the training patients.
        folds: Cross-validation folds.
        seed: Seed of initialisation, shuffling and fold assignment.
        loss_mode: Literal sigmoid loss or softmax cross-entropy.
        batch_size: Patients per step; None trains full batch.
        risk_weights: Class penalties of the loss.
    """

    learning_rate: float = DEFAULT_LEARNING_RATE
    momentum: float = DEFAULT_MOMENTUM
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    epochs: int = DEFAULT_EPOCHS
    folds: int = DEFAULT_FOLDS
    seed: int = 0
    loss_mode: LossMode = LossMode.LITERAL
    batch_size: Optional[int] = None
    risk_weights: RiskWeights = field(default_factory=RiskWeights)

    def __post_init__(self):
        try:
            object.__setattr__(self, "loss_mode", LossMode(self.loss_mode))
        except ValueError as e:
            raise ConfigError(str(e))
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not self.weight_decay >= 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit int, got {self.seed}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class Sample:
    """One patient ready for the network."""

    patient_id: str
    connectivity: DynamicConnectivity
    labels: LabelTensor


@dataclass(frozen=True)
class FoldSplit:
    """Train and test patient ids of one fold."""

    fold: int
    train_ids: tuple
    test_ids: tuple


@dataclass
class TrainResult:
    state: ModelState
    loss_history: list[float]


@dataclass
class FoldResult:
    """Outcome of one cross-validation fold."""

    split: FoldSplit
    loss_history: list[float]
    patients: list[PatientResult]
    metrics: dict[Task, Optional[MetricSummary]]


@dataclass
class CrossValidationReport:
    folds: list[FoldResult]
    summary: dict[Task, Optional[MetricSummary]]

    @property
    def patients(self) -> list[PatientResult]:
        return [p for fold in self.folds for p in fold.patients]


def _decays(name: str) -> bool:
    return not name.endswith(".bias")


def momentum_update(
    parameters: Mapping[str, Tensor],
    gradients: Mapping[str, Optional[np.ndarray]],
    velocity: dict[str, np.ndarray],
    cfg: TrainConfig,
    frozen: Iterable[str] = (),
) -> None:
    """Classical momentum SGD with weight decay folded into the velocity.

    ``v <- momentum * v + (grad + weight_decay * p)`` then ``p <- p - lr * v``.
    Missing gradients count as zero and a missing velocity starts at zero.
    Biases, including the LSTM gate biases, are not decayed.

    Args:
        parameters: Tensors updated in place, by name.
        gradients: Gradient of each name.
        velocity: Momentum of each name, updated in place.
        cfg: Learning rate, momentum and weight decay.
        frozen: Names left untouched, velocity included.

    Raises:
        DivergenceError: If a gradient is not finite. No parameter is
            changed in that case.
    """
    frozen = set(frozen)
    active = [name for name in parameters if name not in frozen]
    for name in active:
        grad = gradients.get(name)
        if grad is not None and not np.all(np.isfinite(grad)):
            raise DivergenceError(name)

    for name in active:
        p = parameters[name]
        grad = gradients.get(name)
        if grad is None:
            grad = np.zeros_like(p.value)
        if cfg.weight_decay and _decays(name):
            grad = grad + cfg.weight_decay * p.value
        previous = velocity.get(name)
        if previous is None:
            previous = np.zeros_like(p.value)
        velocity[name] = cfg.momentum * previous + grad
        p.value = p.value - cfg.learning_rate * velocity[name]


def gradients_of(parameters: Mapping[str, Tensor]) -> dict[str, Optional[np.ndarray]]:
    """The gradients currently stored on ``parameters``."""
    return {name: p.grad for name, p in parameters.items()}


def sgd_step(
    state: ModelState,
    gradients: Mapping[str, Optional[np.ndarray]],
    cfg: TrainConfig,
    frozen: Iterable[str] = (),
) -> ModelState:
    """One momentum SGD step on ``state``.

    The velocity lives on ``state.velocity``. See :func:`momentum_update`.
    """
    momentum_update(state.parameters(), gradients, state.velocity, cfg, frozen)
    return state


def frozen_parameters(state: ModelState, samples: Sequence[Sample]) -> set[str]:
    """Names of the head parameters of tasks no sample performed."""
    present = {task for s in samples for task in s.labels.present_tasks}
    frozen = set()
    for task in state.config.heads:
        if task not in present:
            frozen.update(state.head_parameters(task))
    return frozen


def _batches(count: int, batch_size: Optional[int], rng: np.random.Generator):
    if batch_size is None or batch_size >= count:
        return [np.arange(count)]
    order = rng.permutation(count)
    return [order[i : i + batch_size] for i in range(0, count, batch_size)]


class Trainer:
    """Runs the epoch loop for one model and training configuration."""

    def __init__(self, cfg: TrainConfig, mcfg: ModelConfig):
        self.cfg = cfg
        self.mcfg = mcfg

    def fit(
        self, samples: Sequence[Sample], state: Optional[ModelState] = None
    ) -> TrainResult:
        """Train on ``samples``.

        Args:
            samples: Training patients; patients without labels are skipped.
            state: Parameters to continue from. A fresh network is built
                from ``cfg.seed`` when omitted.

        Returns:
            TrainResult: Final parameters and the mean loss of every epoch.

        Raises:
            ConfigError: If no patient has a present task.
        """
        supervised = [s for s in samples if s.labels.present_tasks]
        if not supervised:
            raise ConfigError("Training needs at least one patient with labels")

        rng = np.random.default_rng(self.cfg.seed)
        if state is None:
            state = build_variant(self.mcfg, rng)
        state.velocity.clear()

        history = []
        for epoch in range(self.cfg.epochs):
            losses = []
            for batch in _batches(len(supervised), self.cfg.batch_size, rng):
                members = [supervised[i] for i in batch]
                losses.extend(self._accumulate(members, state))
                sgd_step(
                    state,
                    gradients_of(state.parameters()),
                    self.cfg,
                    frozen_parameters(state, members),
                )
            history.append(float(np.mean(losses)))
            logger.debug(f"Epoch {epoch + 1}/{self.cfg.epochs}: loss {history[-1]:.6f}")

        logger.info(
            f"Trained {self.mcfg.variant} on {len(supervised)} patients for "
            f"{self.cfg.epochs} epochs: loss {history[0]:.4f} -> {history[-1]:.4f}"
        )
        return TrainResult(state=state, loss_history=history)

    def _accumulate(self, members: list[Sample], state: ModelState) -> list[float]:
        """Accumulate the gradient of the batch mean loss, in batch order."""
        state.zero_grad()
        losses = []
        for sample in members:
            with ComputeGraph() as graph:
                outputs = forward(sample.connectivity, self.mcfg, state)
                breakdown = total_loss(
                    outputs,
                    sample.labels,
                    self.cfg.risk_weights,
                    self.cfg.loss_mode,
                )
                scaled = breakdown.total * (1.0 / len(members))
            graph.backward(scaled)
            losses.append(breakdown.value)
        return losses


def train(
    samples: Sequence[Sample],
    cfg: TrainConfig,
    mcfg: ModelConfig,
    state: Optional[ModelState] = None,
) -> TrainResult:
    """Train a network. See :meth:`Trainer.fit`."""
    if not samples:
        raise ConfigError("Training set is empty")
    return Trainer(cfg, mcfg).fit(samples, state)


def make_sample(
    patient_id: str,
    ts: TimeSeries,
    mask: TumorMask,
    labels: LabelTensor,
    window: WindowConfig,
    variant: Variant,
) -> Sample:
    """Connectivity and labels of one patient for a variant."""
    labels.validate_mask(mask.region_indices)
    return Sample(
        patient_id=patient_id,
        connectivity=prepare_connectivity(ts, window, mask, variant),
        labels=labels,
    )


def make_samples(patients: Sequence, window: WindowConfig, variant: Variant) -> list:
    """Samples of patients exposing ``patient_id``, ``time_series``, ``mask``
    and ``labels``."""
    return [
        make_sample(
            p.patient_id, p.time_series, p.mask, p.labels, window, Variant(variant)
        )
        for p in patients
    ]


def make_folds(patient_ids: Sequence[str], folds: int, seed: int) -> list[FoldSplit]:
    """Seeded shuffle of the sorted ids, then a contiguous partition.

    Sorting first makes the assignment independent of the input order.

    Raises:
        ConfigError: If there are fewer patients than folds, or duplicates.
    """
    ids = sorted(patient_ids)
    if len(set(ids)) != len(ids):
        raise ConfigError("Patient ids must be unique")
    if len(ids) < folds:
        raise ConfigError(f"{len(ids)} patients cannot fill {folds} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    splits = []
    for k, part in enumerate(np.array_split(np.arange(len(ids)), folds)):
        test = tuple(shuffled[i] for i in part)
        held_out = set(test)
        train_ids = tuple(pid for pid in shuffled if pid not in held_out)
        splits.append(FoldSplit(fold=k, train_ids=train_ids, test_ids=test))
    return splits


def run_fold(
    split: FoldSplit,
    samples: Mapping[str, Sample],
    cfg: TrainConfig,
    mcfg: ModelConfig,
) -> FoldResult:
    """Train on the fold's train split and evaluate its test split."""
    fold_cfg = replace(cfg, seed=derive_seed(cfg.seed, split.fold))
    result = train([samples[pid] for pid in split.train_ids], fold_cfg, mcfg)
    patients = [
        evaluate_patient(
            result.state,
            mcfg,
            pid,
            samples[pid].connectivity,
            samples[pid].labels,
        )
        for pid in split.test_ids
    ]
    metrics = average_patient_metrics(patients)
    return FoldResult(
        split=split,
        loss_history=result.loss_history,
        patients=patients,
        metrics=metrics,
    )


def cross_validate(
    samples: Sequence[Sample], cfg: TrainConfig, mcfg: ModelConfig
) -> CrossValidationReport:
    """k-fold cross-validation with per-patient averaged metrics.

    Raises:
        ConfigError: If there are fewer patients than folds, or duplicate
            patient ids.
    """
    splits = make_folds([s.patient_id for s in samples], cfg.folds, cfg.seed)
    by_id = {s.patient_id: s for s in samples}
    folds = []
    for split in splits:
        fold = run_fold(split, by_id, cfg, mcfg)
        language = fold.metrics.get(Task.LANGUAGE)
        auc = "n/a"
        if language is not None and language.auc is not None:
            auc = f"{language.auc:.3f}"
        logger.info(
            f"Fold {split.fold + 1}/{len(splits)}: {len(split.train_ids)} train, "
            f"{len(split.test_ids)} test, language AUC {auc}"
        )
        folds.append(fold)
    return CrossValidationReport(
        folds=folds, summary=aggregate_cv([f.metrics for f in folds])
    )

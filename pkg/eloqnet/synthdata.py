"""
Synthetic patients with planted, time-varying eloquent networks.

Every patient carries four communities of regions (language, finger, foot,
tongue). A community shares a latent signal whose weight switches between a
high and a low correlation level following its system's schedule. Language
and motor schedules alternate, so one system is synchronous while the other
is quiet. Hemispheres are the two halves of the region index range.

Two brute-force references live next to the generator: the per-window
synchrony of every community and a correlation-template classifier that
localizes the communities without training.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .connectivity import TimeSeries, TumorMask, WindowConfig, extract_windows
from .errors import ConfigError, DimensionError
from .loss import LabelTensor
from .model import NUM_CLASSES, TASKS, NodeClass, Task
from .utils import derive_rng

logger = logging.getLogger("eloqnet.synthdata")

SYSTEMS = ("language", "motor")

# Start of each canonical community as a fraction of the region count
_ANCHORS = {
    Task.LANGUAGE: 0.10,
    Task.FINGER: 0.28,
    Task.FOOT: 0.78,
    Task.TONGUE: 0.90,
}


@dataclass(frozen=True)
class SynthConfig:
    """Cohort generator settings.

    Attributes:
        regions: Region count N.
        frames: Frames per scan.
        patients: Cohort size.
        task_presence: Probability that a patient performed each task, in
            the order language, finger, foot, tongue.
        community_sizes: Regions per community, same order.
        bilateral_fraction: Share of patients whose language community is
            split across both hemispheres.
        tumor_size: Inclusive range of tumor sizes in regions.
        active_length: Frames per active interval of a schedule.
        overlap: Frames at each switch where both systems are active.
        high_corr: Within-community correlation while active.
        low_corr: Within-community correlation while inactive.
        noise_level: Standard deviation of additive measurement noise.
        jitter: Probability that a community member moves to a free
            neighbouring region for a given patient.
        seed: Seed of the cohort.
    """

    regions: int = 90
    frames: int = 150
    patients: int = 56
    task_presence: tuple = (1.0, 0.64, 0.30, 0.70)
    community_sizes: tuple = (6, 5, 5, 5)
    bilateral_fraction: float = 5 / 56
    tumor_size: tuple = (3, 6)
    active_length: int = 50
    overlap: int = 0
    high_corr: float = 0.7
    low_corr: float = 0.1
    noise_level: float = 0.2
    jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("task_presence", "community_sizes", "tumor_size"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.regions < 8:
            raise ConfigError(f"regions must be >= 8, got {self.regions}")
        if self.frames < 2:
            raise ConfigError(f"frames must be >= 2, got {self.frames}")
        if self.patients < 1:
            raise ConfigError(f"patients must be >= 1, got {self.patients}")
        if len(self.task_presence) != 4 or not all(
            0.0 <= p <= 1.0 for p in self.task_presence
        ):
            raise ConfigError(
                f"task_presence must be 4 probabilities: {self.task_presence}"
            )
        if max(self.task_presence) <= 0:
            raise ConfigError("At least one task needs a positive presence probability")
        if len(self.community_sizes) != 4 or min(self.community_sizes) < 1:
            raise ConfigError(
                f"community_sizes must be 4 positive sizes: {self.community_sizes}"
            )
        if self.community_sizes[0] < 2:
            raise ConfigError("The language community needs at least 2 regions")
        if not 0.0 <= self.bilateral_fraction <= 1.0:
            raise ConfigError(
                f"bilateral_fraction must be in [0, 1]: {self.bilateral_fraction}"
            )
        low, high = self.tumor_size
        if not 1 <= low <= high:
            raise ConfigError(
                f"tumor_size must be a range 1 <= min <= max: {self.tumor_size}"
            )
        if self.active_length < 1 or not 0 <= self.overlap < self.active_length:
            raise ConfigError(
                f"Need active_length >= 1 and 0 <= overlap < active_length, got "
                f"{self.active_length}/{self.overlap}"
            )
        if not 0.0 <= self.low_corr < self.high_corr < 1.0:
            raise ConfigError(
                "Need 0 <= low_corr < high_corr < 1, got "
                f"{self.low_corr}/{self.high_corr}"
            )
        if self.noise_level < 0 or not 0.0 <= self.jitter <= 1.0:
            raise ConfigError("noise_level must be >= 0 and jitter in [0, 1]")
        # Raises on infeasible packing
        template_layout(self)

    @property
    def hemisphere_split(self) -> int:
        """First region index of the right hemisphere."""
        return self.regions // 2

    def presence(self, task: Task) -> float:
        return self.task_presence[TASKS.index(Task(task))]


@dataclass
class SynthPatient:
    """A generated patient and its ground truth.

    Attributes:
        patient_id: Identifier, unique within a cohort.
        time_series: Scan of shape ``(frames, regions)``.
        mask: Tumor regions.
        labels: One-hot labels of the tasks the patient performed.
        communities: Member regions of every planted community, performed
            or not.
        schedules: Frame-wise activity of the language and motor systems.
        bilateral: Whether the language community spans both hemispheres.
    """

    patient_id: str
    time_series: TimeSeries
    mask: TumorMask
    labels: LabelTensor
    communities: dict[Task, list[int]]
    schedules: dict[str, np.ndarray]
    bilateral: bool = False

    @property
    def regions(self) -> int:
        return self.time_series.region_count

    @property
    def hemisphere(self) -> np.ndarray:
        """0 for regions in the left half of the index range, 1 for the right."""
        return (np.arange(self.regions) >= self.regions // 2).astype(int)

    def window_activity(self, cfg: WindowConfig) -> dict[str, np.ndarray]:
        """Fraction of active frames of each system in every window."""
        return {
            system: np.array(
                [w.mean() for w in _frame_windows(self.schedules[system], cfg)]
            )
            for system in SYSTEMS
        }


def _frame_windows(schedule: np.ndarray, cfg: WindowConfig) -> list[np.ndarray]:
    count = cfg.window_count(schedule.shape[0])
    return [
        schedule[t * cfg.stride : t * cfg.stride + cfg.window_length]
        for t in range(count)
    ]


def template_layout(cfg: SynthConfig) -> dict[str, list[int]]:
    """Canonical community positions shared by every patient.

    Returns:
        dict: Task name to its regions, plus ``"language-right"`` with the
            right-hemisphere homologue of the language community.

    Raises:
        ConfigError: If the communities do not fit or overlap.
    """
    N, half = cfg.regions, cfg.regions // 2
    layout = {}
    for task, size in zip(TASKS, cfg.community_sizes):
        start = int(round(_ANCHORS[task] * N))
        layout[str(task)] = list(range(start, start + size))
    layout["language-right"] = [i + half for i in layout[str(Task.LANGUAGE)]]

    used: set[int] = set()
    for name, members in layout.items():
        if members[-1] >= N:
            raise ConfigError(f"Community '{name}' does not fit in {N} regions")
        if used.intersection(members):
            raise ConfigError(f"Community '{name}' overlaps another community")
        used.update(members)
    if layout[str(Task.LANGUAGE)][-1] >= half:
        raise ConfigError("The language community must fit in the left hemisphere")
    if N - len(used) < cfg.tumor_size[1]:
        raise ConfigError(f"No room for a tumor of {cfg.tumor_size[1]} regions")
    return layout


def _jitter(
    members: list[int],
    taken: set[int],
    hemisphere_of,
    rng: np.random.Generator,
    p: float,
) -> list[int]:
    """Move members to a free neighbour in the same hemisphere with probability p."""
    out = []
    for i in members:
        target = i
        if rng.random() < p:
            step = int(rng.choice((-1, 1)))
            j = i + step
            if j not in taken and j >= 0 and hemisphere_of(j) == hemisphere_of(i):
                target = j
        taken.discard(i)
        taken.add(target)
        out.append(target)
    return sorted(out)


def _place_communities(
    cfg: SynthConfig, rng: np.random.Generator, bilateral: bool
) -> dict[Task, list[int]]:
    layout = template_layout(cfg)
    N = cfg.regions

    def hemisphere_of(i: int) -> int:
        return -1 if i >= N else int(i >= cfg.hemisphere_split)

    language = layout[str(Task.LANGUAGE)]
    if bilateral:
        keep = len(language) - len(language) // 2
        language = language[:keep] + layout["language-right"][keep:]
    planned = {Task.LANGUAGE: language}
    for task in TASKS[1:]:
        planned[task] = layout[str(task)]

    taken = {i for members in planned.values() for i in members}
    # Keep a gap to the bilateral homologue so jitter cannot reach it
    taken.update(layout["language-right"])
    return {
        task: _jitter(members, taken, hemisphere_of, rng, cfg.jitter)
        for task, members in planned.items()
    }


def _place_tumor(
    cfg: SynthConfig, rng: np.random.Generator, eloquent: set[int]
) -> list[int]:
    size = int(rng.integers(cfg.tumor_size[0], cfg.tumor_size[1] + 1))
    starts = [
        s
        for s in range(cfg.regions - size + 1)
        if not eloquent.intersection(range(s, s + size))
    ]
    if not starts:
        # Contiguous room may be missing even when enough regions are free
        raise ConfigError(f"No contiguous room for a tumor of {size} regions")
    start = int(rng.choice(starts))
    return list(range(start, start + size))


def _schedules(cfg: SynthConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    period = 2 * cfg.active_length
    phase = int(rng.integers(0, period))
    position = (np.arange(cfg.frames) + phase) % period
    language = position < cfg.active_length
    motor = ~language
    if cfg.overlap:
        # Both systems stay on for ``overlap`` frames after each switch
        after_switch = position - cfg.active_length
        language = language | ((after_switch >= 0) & (after_switch < cfg.overlap))
        motor = motor | (position < cfg.overlap)
    return {"language": language, "motor": motor}


def _signals(
    cfg: SynthConfig,
    rng: np.random.Generator,
    communities: dict[Task, list[int]],
    schedules: dict[str, np.ndarray],
) -> np.ndarray:
    """Unit-variance noise, with shared latent signals inside communities.

    A member of an active community reads ``sqrt(r) * s + sqrt(1 - r) * e``
    so that members correlate at level ``r``.
    """
    data = rng.standard_normal((cfg.frames, cfg.regions))
    for task, members in communities.items():
        latent = rng.standard_normal(cfg.frames)
        active = schedules[task.system]
        level = np.where(active, cfg.high_corr, cfg.low_corr)[:, None]
        data[:, members] = (
            np.sqrt(level) * latent[:, None] + np.sqrt(1.0 - level) * data[:, members]
        )
    if cfg.noise_level:
        data += cfg.noise_level * rng.standard_normal(data.shape)
    return data


def _sample_presence(cfg: SynthConfig, rng: np.random.Generator) -> list[Task]:
    draws = rng.random(len(TASKS))
    present = [t for t, u in zip(TASKS, draws) if u < cfg.presence(t)]
    if not present:
        present = [TASKS[int(np.argmax(cfg.task_presence))]]
    return present


def generate_patient(
    cfg: SynthConfig,
    rng: np.random.Generator,
    patient_id: str = "p000",
    bilateral: Optional[bool] = None,
    present: Optional[list] = None,
) -> SynthPatient:
    """Generate one patient.

    Args:
        cfg: Generator settings.
        rng: Source of every random draw.
        patient_id: Identifier stored on the patient.
        bilateral: Force a bilateral or unilateral language community;
            sampled with ``cfg.bilateral_fraction`` when None.
        present: Force the performed tasks; sampled when None.

    Raises:
        ConfigError: If the communities or the tumor cannot be placed.
    """
    if bilateral is None:
        bilateral = bool(rng.random() < cfg.bilateral_fraction)
    present = (
        _sample_presence(cfg, rng) if present is None else [Task(t) for t in present]
    )
    if not present:
        raise ConfigError("A patient must perform at least one task")

    communities = _place_communities(cfg, rng, bilateral)
    eloquent = {i for members in communities.values() for i in members}
    tumor = _place_tumor(cfg, rng, eloquent)
    schedules = _schedules(cfg, rng)
    data = _signals(cfg, rng, communities, schedules)

    labels = LabelTensor.from_regions(
        cfg.regions,
        {task: communities[task] for task in TASKS if task in present},
        tumor,
    )
    return SynthPatient(
        patient_id=patient_id,
        time_series=TimeSeries(data),
        mask=TumorMask(frozenset(tumor)),
        labels=labels,
        communities=communities,
        schedules=schedules,
        bilateral=bilateral,
    )


def patient_name(index: int) -> str:
    return f"p{index:03d}"


def generate_cohort(cfg: SynthConfig) -> list[SynthPatient]:
    """Generate ``cfg.patients`` patients.

    Exactly ``round(bilateral_fraction * patients)`` patients are bilateral,
    picked by a seeded permutation. Every patient draws from its own stream
    derived from the seed and its index.
    """
    bilateral_count = int(round(cfg.bilateral_fraction * cfg.patients))
    order = derive_rng(cfg.seed, 0).permutation(cfg.patients)
    bilateral = set(order[:bilateral_count].tolist())

    patients = [
        generate_patient(
            cfg,
            derive_rng(cfg.seed, 1, index),
            patient_id=patient_name(index),
            bilateral=index in bilateral,
        )
        for index in range(cfg.patients)
    ]
    counts = {
        str(task): sum(p.labels.is_present(task) for p in patients) for task in TASKS
    }
    logger.info(
        f"Generated {cfg.patients} patients ({bilateral_count} bilateral), "
        f"task counts {counts}"
    )
    return patients


@dataclass
class SynchronyReport:
    """Mean within-community correlation of every window.

    Attributes:
        networks: Community name to per-window synchrony. Windows where
            every pair is undefined hold NaN.
        excluded_pairs: Community name to the number of (window, pair)
            combinations skipped because a region was constant.
    """

    networks: dict[str, np.ndarray]
    excluded_pairs: dict[str, int] = field(default_factory=dict)

    def system(self, name: str) -> np.ndarray:
        """Per-window synchrony of a system: language, or the mean of the
        motor communities."""
        if name == "language":
            return self.networks[str(Task.LANGUAGE)]
        motor = np.stack([self.networks[str(t)] for t in TASKS[1:]])
        return np.nanmean(motor, axis=0)


def _pearson(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    dx, dy = x - x.mean(), y - y.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0:
        return None
    return float((dx * dy).sum() / denom)


def oracle_window_synchrony(
    patient: SynthPatient, cfg: WindowConfig
) -> SynchronyReport:
    """Brute-force mean pairwise Pearson correlation inside each community,
    per window."""
    windows = extract_windows(patient.time_series, cfg)
    networks, excluded = {}, {}
    for task, members in patient.communities.items():
        values, skipped = [], 0
        for window in windows:
            pairs = []
            for a in range(len(members)):
                for b in range(a + 1, len(members)):
                    r = _pearson(window[:, members[a]], window[:, members[b]])
                    if r is None:
                        skipped += 1
                    else:
                        pairs.append(r)
            values.append(np.mean(pairs) if pairs else np.nan)
        networks[str(task)] = np.array(values)
        excluded[str(task)] = skipped
    return SynchronyReport(networks=networks, excluded_pairs=excluded)


# Correlation with the community template above which a region is eloquent
TEMPLATE_THRESHOLD = 0.35


@dataclass
class TemplateLocalization:
    """Labels of the correlation-template classifier.

    Attributes:
        scores: Task to ``(N, 3)`` scores; column 0 is the correlation with
            the task's template, so it ranks eloquence.
        predictions: Task to the class id of every region.
    """

    scores: dict[Task, np.ndarray]
    predictions: dict[Task, np.ndarray]


def _template_regions(layout: dict[str, list[int]], task: Task) -> list[int]:
    regions = list(layout[str(task)])
    if task is Task.LANGUAGE:
        # Either hemisphere may carry language
        regions += layout["language-right"]
    return regions


def template_classifier(
    patient: SynthPatient,
    cfg: SynthConfig,
    threshold: float = TEMPLATE_THRESHOLD,
) -> TemplateLocalization:
    """Brute-force localization by correlation with community templates.

    For every task the template is the mean signal of the canonical
    community positions of :func:`template_layout`, tumor regions left out,
    over the frames where the task's system is active. Each region is
    scored by its Pearson correlation with the template, computed without
    the region itself, and is eloquent when the score exceeds
    ``threshold``. Tumor regions are labelled tumor.

    The classifier reads only the cohort layout, the schedules and the
    tumor mask, never the labels.

    Raises:
        DimensionError: If the patient does not match ``cfg``.
    """
    if patient.regions != cfg.regions:
        raise DimensionError(
            f"Patient has {patient.regions} regions, layout expects {cfg.regions}"
        )
    layout = template_layout(cfg)
    tumor = set(patient.mask.region_indices)
    data = patient.time_series.data
    N = patient.regions

    scores, predictions = {}, {}
    for task in TASKS:
        active = patient.schedules[task.system]
        frames = data[active] if active.sum() >= 3 else data
        template = [i for i in _template_regions(layout, task) if i not in tumor]
        S = np.zeros((N, NUM_CLASSES))
        S[:, NodeClass.TUMOR] = -2.0
        S[:, NodeClass.BACKGROUND] = threshold
        for i in range(N):
            if i in tumor:
                S[i] = (-1.0, 2.0, -2.0)
                continue
            others = [j for j in template if j != i]
            r = None
            if others:
                r = _pearson(frames[:, i], frames[:, others].mean(axis=1))
            S[i, NodeClass.ELOQUENT] = -1.0 if r is None else r
        scores[task] = S
        predictions[task] = np.argmax(S, axis=1)
    return TemplateLocalization(scores=scores, predictions=predictions)

"""
The multi-task localization network and its baseline variants.

Per window, connectivity runs through the edge-to-edge and edge-to-node
layers. The node features feed two shared node-wise dense layers and four
task heads (language, finger, foot, tongue) scoring every region over the
classes eloquent, tumor and background. In parallel the node-to-graph layer
summarises each window into a vector and an LSTM turns the sequence into a
language and a motor attention over time. Head scores are combined over time
with the attention of their functional system.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional

import numpy as np
from tabulate import tabulate

from . import diffcore as dc
from .connectivity import (
    DynamicConnectivity,
    TimeSeries,
    TumorMask,
    WindowConfig,
    build_dynamic_connectivity,
)
from .diffcore import Tensor
from .errors import ConfigError, DimensionError
from .layers import (
    DEFAULT_LEAKY_SLOPE,
    AttentionPair,
    DenseParams,
    E2EParams,
    E2NParams,
    LSTMParams,
    N2GParams,
    e2e_forward,
    e2n_forward,
    lstm_attention,
    n2g_forward,
    nodewise_fc,
)

logger = logging.getLogger("eloqnet.model")

DEFAULT_FILTERS = 25
DEFAULT_FC_DIMS = (64, 32)
DEFAULT_LSTM_HIDDEN = 16


class Task(str, Enum):
    """Functional systems with a dedicated head."""

    def __str__(self):
        return str(self.value)

    def __repr__(self):
        return str(self)

    LANGUAGE = "language"
    FINGER = "finger"
    FOOT = "foot"
    TONGUE = "tongue"

    @property
    def system(self) -> str:
        """Attention stream used by the task: 'language' or 'motor'."""
        return "language" if self is Task.LANGUAGE else "motor"


TASKS = tuple(Task)
MOTOR_TASKS = (Task.FINGER, Task.FOOT, Task.TONGUE)


class NodeClass(IntEnum):
    """Per-region classes, in score column order."""

    ELOQUENT = 0
    TUMOR = 1
    BACKGROUND = 2


NUM_CLASSES = len(NodeClass)


class Variant(str, Enum):
    """Network variants.

    PROPOSED: dynamic connectivity, graph convolutions, LSTM attention.
    MT_GNN_STATIC: same convolutions on one whole-scan matrix, no LSTM.
    MT_ANN: dense layers on connectivity rows instead of graph
        convolutions, LSTM attention kept.
    """

    def __str__(self):
        return str(self.value)

    def __repr__(self):
        return str(self)

    PROPOSED = "proposed"
    MT_ANN = "mt-ann"
    MT_GNN_STATIC = "mt-gnn-static"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of the network.

    Attributes:
        regions: Number of regions N.
        filters: Feature maps F of the convolutional branch.
        fc_dims: Widths of the two shared node-wise dense layers.
        lstm_hidden: Hidden size of the first LSTM layer; the second has 2.
        leaky_slope: Signed negative-side slope of the activation. The
            default -0.1 is taken literally; +0.1 gives the usual LeakyReLU.
        variant: Which network to build.
        heads: Task heads, in output order.
        e2n_mixing: Let every edge-to-node filter read all feature maps.
    """

    regions: int
    filters: int = DEFAULT_FILTERS
    fc_dims: tuple = DEFAULT_FC_DIMS
    lstm_hidden: int = DEFAULT_LSTM_HIDDEN
    leaky_slope: float = DEFAULT_LEAKY_SLOPE
    variant: Variant = Variant.PROPOSED
    heads: tuple = TASKS
    e2n_mixing: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "variant", Variant(self.variant))
            object.__setattr__(self, "heads", tuple(Task(h) for h in self.heads))
        except ValueError as e:
            raise ConfigError(str(e))
        object.__setattr__(self, "fc_dims", tuple(int(d) for d in self.fc_dims))
        if self.regions < 2:
            raise ConfigError(f"regions must be >= 2, got {self.regions}")
        if self.filters < 1:
            raise ConfigError(f"filters must be >= 1, got {self.filters}")
        if len(self.fc_dims) != 2 or min(self.fc_dims) < 1:
            raise ConfigError(f"fc_dims must be two positive sizes, got {self.fc_dims}")
        if self.lstm_hidden < 1:
            raise ConfigError(f"lstm_hidden must be >= 1, got {self.lstm_hidden}")
        if not np.isfinite(self.leaky_slope):
            raise ConfigError("leaky_slope must be finite")
        if len(self.heads) != 4 or len(set(self.heads)) != 4:
            raise ConfigError(f"heads must list the four tasks once, got {self.heads}")


@dataclass
class ModelState:
    """All learnable parameters of one network.

    Only the groups used by the variant are set: ``e2e`` and ``e2n`` for the
    graph variants, ``ann`` for MT-ANN, ``n2g`` and ``lstm`` for the variants
    with attention. ``velocity`` holds the optimizer momentum per parameter
    name; it starts empty and is not part of a checkpoint.
    """

    config: ModelConfig
    fc: list[DenseParams]
    heads: dict[Task, DenseParams]
    e2e: Optional[E2EParams] = None
    e2n: Optional[E2NParams] = None
    ann: list[DenseParams] = field(default_factory=list)
    n2g: Optional[N2GParams] = None
    lstm: Optional[LSTMParams] = None
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def groups(self) -> "OrderedDict[str, dict[str, Tensor]]":
        """Parameters grouped by layer, in a fixed order."""
        groups: OrderedDict[str, dict[str, Tensor]] = OrderedDict()
        if self.e2e is not None:
            groups["e2e"] = self.e2e.tensors()
        if self.e2n is not None:
            groups["e2n"] = self.e2n.tensors()
        if self.ann:
            groups["ann"] = {k: v for p in self.ann for k, v in p.tensors().items()}
        if self.n2g is not None:
            groups["n2g"] = self.n2g.tensors()
        if self.lstm is not None:
            groups["lstm"] = self.lstm.tensors()
        groups["fc"] = {k: v for p in self.fc for k, v in p.tensors().items()}
        for task in self.config.heads:
            groups[f"head.{task}"] = self.heads[task].tensors()
        return groups

    def parameters(self) -> "OrderedDict[str, Tensor]":
        """Every parameter by name, in a fixed order."""
        out: OrderedDict[str, Tensor] = OrderedDict()
        for group in self.groups().values():
            out.update(group)
        return out

    def head_parameters(self, task: Task) -> dict[str, Tensor]:
        return self.heads[Task(task)].tensors()

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of all parameter values."""
        return {name: p.value.copy() for name, p in self.parameters().items()}


@dataclass
class HeadOutputs:
    """Per-window head scores and the attention over windows.

    Attributes:
        scores: Task to ``(T, N, 3)`` score tensor.
        attention: Language and motor attention, each of length T.
    """

    scores: dict[Task, Tensor]
    attention: AttentionPair

    @property
    def window_count(self) -> int:
        return self.attention.length

    def stacked(self) -> np.ndarray:
        """Scores as an array of shape ``(4, T, N, 3)`` in head order."""
        return np.stack([self.scores[t].value for t in self.scores])

    def attention_for(self, task: Task) -> Tensor:
        return (
            self.attention.language
            if Task(task).system == "language"
            else self.attention.motor
        )


def ann_hidden_size(cfg: ModelConfig) -> int:
    """Hidden width K of the MT-ANN row network.

    The row network ``N -> K -> F`` replaces the edge-to-edge and
    edge-to-node layers; K is chosen so its parameter count is as close as
    possible to theirs.
    """
    N, F = cfg.regions, cfg.filters
    e2n_filters = F * F * N if cfg.e2n_mixing else F * N
    target = 2 * F * N + F + e2n_filters + F

    def count(k: int) -> int:
        return N * k + k + k * F + F

    guess = max(1, round((target - F) / (N + 1 + F)))
    candidates = [k for k in (guess - 1, guess, guess + 1) if k >= 1]
    return min(candidates, key=lambda k: abs(count(k) - target))


def build_variant(cfg: ModelConfig, rng: np.random.Generator) -> ModelState:
    """Create freshly initialised parameters for ``cfg.variant``.

    Weights are uniform in ``+-1/sqrt(fan_in)``; biases are zero except the
    LSTM forget gates, which start at 1.

    Raises:
        ConfigError: If the variant is unknown.
    """
    variant = Variant(cfg.variant)
    N, F = cfg.regions, cfg.filters
    state_kwargs = {}

    if variant in (Variant.PROPOSED, Variant.MT_GNN_STATIC):
        state_kwargs["e2e"] = E2EParams.init(rng, F, N)
        state_kwargs["e2n"] = E2NParams.init(rng, F, N, mixing=cfg.e2n_mixing)
    elif variant == Variant.MT_ANN:
        hidden = ann_hidden_size(cfg)
        state_kwargs["ann"] = [
            DenseParams.init(rng, N, hidden, "ann.0"),
            DenseParams.init(rng, hidden, F, "ann.1"),
        ]
    else:  # pragma: no cover - Variant() already rejects unknown names
        raise ConfigError(f"Unknown variant: {variant}")

    if variant != Variant.MT_GNN_STATIC:
        state_kwargs["n2g"] = N2GParams.init(rng, F, N)
        state_kwargs["lstm"] = LSTMParams.init(rng, F, (cfg.lstm_hidden, 2))

    d1, d2 = cfg.fc_dims
    fc = [DenseParams.init(rng, F, d1, "fc.0"), DenseParams.init(rng, d1, d2, "fc.1")]
    heads = {
        task: DenseParams.init(rng, d2, 3, f"head.{task}") for task in cfg.heads
    }
    state = ModelState(config=cfg, fc=fc, heads=heads, **state_kwargs)
    logger.debug(
        f"Built {variant} with {count_parameters(state)} parameters "
        f"(N={N}, F={F}, fc={cfg.fc_dims})"
    )
    return state


def count_parameters(state: ModelState) -> int:
    return int(sum(p.size for p in state.parameters().values()))


def parameter_table(state: ModelState) -> str:
    """Tabulated parameter count per layer group."""
    rows = [
        [name, sum(t.size for t in tensors.values())]
        for name, tensors in state.groups().items()
    ]
    rows.append(["total", count_parameters(state)])
    return tabulate(rows, headers=["Group", "Parameters"], tablefmt="fancy_grid")


def prepare_connectivity(
    ts: TimeSeries, window: WindowConfig, mask: TumorMask, variant: Variant
) -> DynamicConnectivity:
    """Connectivity input for a variant.

    The static variant uses the whole scan as a single window.
    """
    if Variant(variant) == Variant.MT_GNN_STATIC:
        window = window.whole_scan(ts.frame_count)
    return build_dynamic_connectivity(ts, window, mask)


def _node_features(W: Tensor, state: ModelState, slope: float) -> Tensor:
    """``(T, F, N)`` node features from the ``(T, N, N)`` connectivity."""
    if state.ann:
        T, N, _ = W.shape
        rows = dc.reshape(W, (T * N, N))
        for layer in state.ann:
            rows = nodewise_fc(rows, layer.weight, layer.bias, slope)
        F = state.config.filters
        return dc.transpose(dc.reshape(rows, (T, N, F)), (0, 2, 1))
    H = e2e_forward(W, state.e2e, slope)
    return e2n_forward(H, state.e2n, slope)


def forward(
    connectivity: DynamicConnectivity, cfg: ModelConfig, state: ModelState
) -> HeadOutputs:
    """Run the network on one scan.

    Raises:
        DimensionError: If the region count differs from ``cfg.regions``.
    """
    if connectivity.region_count != cfg.regions:
        raise DimensionError(
            f"Connectivity has {connectivity.region_count} regions, "
            f"model expects {cfg.regions}"
        )
    slope = cfg.leaky_slope
    W = Tensor(connectivity.matrices)
    T, N = connectivity.window_count, connectivity.region_count

    h = _node_features(W, state, slope)

    nodes = dc.reshape(dc.transpose(h, (0, 2, 1)), (T * N, cfg.filters))
    for layer in state.fc:
        nodes = nodewise_fc(nodes, layer.weight, layer.bias, slope)
    scores = {
        task: dc.reshape(
            nodewise_fc(nodes, state.heads[task].weight, state.heads[task].bias, None),
            (T, N, 3),
        )
        for task in cfg.heads
    }

    if state.lstm is None:
        if T != 1:
            raise DimensionError(
                f"{cfg.variant} expects a single static window, got T={T}"
            )
        attention = AttentionPair(language=Tensor([1.0]), motor=Tensor([1.0]))
    else:
        q = n2g_forward(h, state.n2g, slope)
        attention = lstm_attention(q, state.lstm)

    return HeadOutputs(scores=scores, attention=attention)


def aggregate_scores(
    outputs: HeadOutputs, tasks: Optional[tuple] = None
) -> dict[Task, Tensor]:
    """Attention-weighted sum over windows, ``S[n, c] = sum_t a[t] L[t, n, c]``.

    The language head uses the language attention, the motor heads the
    motor attention.
    """
    tasks = outputs.scores.keys() if tasks is None else [Task(t) for t in tasks]
    return {
        task: dc.einsum("t,tnc->nc", outputs.attention_for(task), outputs.scores[task])
        for task in tasks
    }


def predict_labels(aggregated: dict[Task, Tensor]) -> dict[Task, np.ndarray]:
    """Class id per region; ties go to the lowest class index."""
    return {
        task: np.argmax(np.asarray(dc.as_tensor(s).value), axis=1)
        for task, s in aggregated.items()
    }

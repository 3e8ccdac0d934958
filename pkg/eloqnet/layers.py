"""
Graph convolution, node-wise dense and recurrent attention layers.

The convolutional layers accept either a single input or a stack with a
leading time axis, so a whole scan runs through one call with the same
(tied) weights for every window:

* edge-to-edge: ``(T, N, N) -> (T, F, N, N)``
* edge-to-node: ``(T, F, N, N) -> (T, F, N)``
* node-to-graph: ``(T, F, N) -> (T, F)``
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import DimensionError

logger = logging.getLogger("eloqnet.layers")

DEFAULT_LEAKY_SLOPE = -0.1
LSTM_GATES = ("input", "forget", "cell", "output")

ArrayLike = Union[Tensor, np.ndarray]


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def _zeros(shape: tuple, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def _with_time_axis(x: ArrayLike, ndim: int, what: str) -> tuple[Tensor, bool]:
    """Add a leading time axis to single inputs. Returns (tensor, was_single)."""
    x = dc.as_tensor(x)
    if x.ndim == ndim:
        return dc.reshape(x, (1, *x.shape)), True
    if x.ndim == ndim + 1:
        return x, False
    raise DimensionError(f"{what}: expected {ndim} or {ndim + 1} dims, got {x.shape}")


def _drop_time_axis(x: Tensor, single: bool) -> Tensor:
    return dc.reshape(x, x.shape[1:]) if single else x


@dataclass
class E2EParams:
    """Row filters, column filters and bias of the edge-to-edge layer."""

    row: Tensor
    col: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, filters: int, regions: int) -> "E2EParams":
        return cls(
            row=_uniform(rng, (filters, regions), 2 * regions, "e2e.row"),
            col=_uniform(rng, (filters, regions), 2 * regions, "e2e.col"),
            bias=_zeros((filters,), "e2e.bias"),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"e2e.row": self.row, "e2e.col": self.col, "e2e.bias": self.bias}


@dataclass
class E2NParams:
    """Edge-to-node filters.

    ``filters`` has shape ``(F, N)`` for the channel-wise layer or
    ``(F, F, N)`` when every output filter mixes all input maps.
    """

    filters: Tensor
    bias: Tensor

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        filters: int,
        regions: int,
        mixing: bool = False,
    ) -> "E2NParams":
        shape = (filters, filters, regions) if mixing else (filters, regions)
        fan_in = regions * (filters if mixing else 1)
        return cls(
            filters=_uniform(rng, shape, fan_in, "e2n.filters"),
            bias=_zeros((filters,), "e2n.bias"),
        )

    @property
    def mixing(self) -> bool:
        return self.filters.ndim == 3

    def tensors(self) -> dict[str, Tensor]:
        return {"e2n.filters": self.filters, "e2n.bias": self.bias}


@dataclass
class N2GParams:
    filters: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, filters: int, regions: int) -> "N2GParams":
        return cls(
            filters=_uniform(rng, (filters, regions), regions, "n2g.filters"),
            bias=_zeros((filters,), "n2g.bias"),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"n2g.filters": self.filters, "n2g.bias": self.bias}


@dataclass
class DenseParams:
    """Weights ``(in, out)`` and bias ``(out,)`` of a dense layer."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(
        cls, rng: np.random.Generator, fan_in: int, fan_out: int, prefix: str
    ) -> "DenseParams":
        return cls(
            weight=_uniform(rng, (fan_in, fan_out), fan_in, f"{prefix}.weight"),
            bias=_zeros((fan_out,), f"{prefix}.bias"),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}


@dataclass
class LSTMLayerParams:
    """One LSTM layer; gate blocks are laid out as input, forget, cell, output."""

    w_input: Tensor
    w_hidden: Tensor
    bias: Tensor

    @classmethod
    def init(
        cls, rng: np.random.Generator, input_size: int, hidden_size: int, prefix: str
    ) -> "LSTMLayerParams":
        fan_in = input_size + hidden_size
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size : 2 * hidden_size] = 1.0
        return cls(
            w_input=_uniform(
                rng, (input_size, 4 * hidden_size), fan_in, f"{prefix}.w_input"
            ),
            w_hidden=_uniform(
                rng, (hidden_size, 4 * hidden_size), fan_in, f"{prefix}.w_hidden"
            ),
            bias=Tensor(bias, requires_grad=True, name=f"{prefix}.bias"),
        )

    @property
    def hidden_size(self) -> int:
        return self.w_hidden.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.w_input, self.w_hidden, self.bias)}


@dataclass
class LSTMParams:
    """Stacked LSTM layers. The last layer has hidden size 2."""

    layers: list[LSTMLayerParams]

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        input_size: int,
        hidden_sizes: tuple[int, ...] = (16, 2),
    ) -> "LSTMParams":
        if hidden_sizes[-1] != 2:
            raise DimensionError(
                f"Last LSTM layer must have 2 outputs, got {hidden_sizes[-1]}"
            )
        layers = []
        size = input_size
        for k, hidden in enumerate(hidden_sizes):
            layers.append(LSTMLayerParams.init(rng, size, hidden, f"lstm.{k}"))
            size = hidden
        return cls(layers=layers)

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for layer in self.layers:
            out.update(layer.tensors())
        return out


@dataclass
class AttentionPair:
    """Language and motor attention over the T windows."""

    language: Tensor
    motor: Tensor

    @property
    def length(self) -> int:
        return self.language.shape[0]

    def numpy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.language.value, self.motor.value


def e2e_forward(W: ArrayLike, params: E2EParams, slope: float) -> Tensor:
    """Edge-to-edge filters.

    ``H[f, i, j] = phi(sum_n r[f, n] W[i, n] + c[f, n] W[n, j] + b[f])`` with
    the bias added once per entry.

    Args:
        W: ``(N, N)`` matrix or ``(T, N, N)`` stack.
        params: Filters of shape ``(F, N)``.
        slope: Negative-side slope of the activation.

    Returns:
        Tensor: ``(F, N, N)`` or ``(T, F, N, N)``.
    """
    W, single = _with_time_axis(W, 2, "e2e_forward")
    N = W.shape[-1]
    if W.shape[-2] != N or params.row.shape[1] != N or params.col.shape[1] != N:
        raise DimensionError(
            f"e2e_forward: input {W.shape} does not match filters "
            f"{params.row.shape}/{params.col.shape}"
        )
    row_term = dc.einsum("tin,fn->tfi", W, params.row)
    col_term = dc.einsum("fn,tnj->tfj", params.col, W)
    H = dc.add_bias(dc.pair_sum(row_term, col_term), params.bias, axis=1)
    return _drop_time_axis(dc.leaky_relu(H, slope), single)


def e2n_forward(H: ArrayLike, params: E2NParams, slope: float) -> Tensor:
    """Edge-to-node filters, ``h[f, i] = phi(sum_n g[f, n] H[f, i, n] + p[f])``.

    With mixing filters of shape ``(F, F, N)`` every output map reads all
    input maps instead of its own.

    Returns:
        Tensor: ``(F, N)`` or ``(T, F, N)``.
    """
    H, single = _with_time_axis(H, 3, "e2n_forward")
    spec = "gfn,tfin->tgi" if params.mixing else "fn,tfin->tfi"
    h = dc.einsum(spec, params.filters, H)
    h = dc.add_bias(h, params.bias, axis=1)
    return _drop_time_axis(dc.leaky_relu(h, slope), single)


def n2g_forward(h: ArrayLike, params: N2GParams, slope: float) -> Tensor:
    """Node-to-graph filters, ``q[f] = phi(sum_n k[f, n] h[f, n] + d[f])``.

    Returns:
        Tensor: ``(F,)`` or ``(T, F)``.
    """
    h, single = _with_time_axis(h, 2, "n2g_forward")
    q = dc.einsum("fn,tfn->tf", params.filters, h)
    q = dc.add_bias(q, params.bias, axis=1)
    return _drop_time_axis(dc.leaky_relu(q, slope), single)


def nodewise_fc(
    h: ArrayLike, weights: Tensor, bias: Tensor, slope: Union[float, None]
) -> Tensor:
    """Dense layer applied to every row (node) with shared weights.

    Args:
        h: ``(N, F_in)`` node features.
        weights: ``(F_in, F_out)``.
        bias: ``(F_out,)``.
        slope: Activation slope; None leaves the output linear.
    """
    out = dc.add_bias(dc.matmul(dc.as_tensor(h), weights), bias, axis=1)
    return out if slope is None else dc.leaky_relu(out, slope)


def lstm_forward(q_seq: ArrayLike, params: LSTMParams) -> Tensor:
    """Run the stacked LSTM over ``q_seq`` of shape ``(T, F)``.

    Initial hidden and cell states are zero.

    Returns:
        Tensor: ``(T, hidden of the last layer)``.
    """
    q_seq = dc.as_tensor(q_seq)
    if q_seq.ndim != 2:
        raise DimensionError(f"lstm_forward: expected (T, F), got {q_seq.shape}")
    if q_seq.shape[0] == 0:
        raise DimensionError("lstm_forward: empty sequence")

    sequence = q_seq
    for layer in params.layers:
        size = layer.hidden_size
        projected = dc.add_bias(
            dc.matmul(sequence, layer.w_input), layer.bias, axis=1
        )
        h = Tensor(np.zeros((1, size)))
        c = Tensor(np.zeros((1, size)))
        outputs = []
        for t in range(sequence.shape[0]):
            z = dc.take(projected, 0, t, t + 1) + dc.matmul(h, layer.w_hidden)
            i = dc.sigmoid(dc.take(z, 1, 0, size))
            f = dc.sigmoid(dc.take(z, 1, size, 2 * size))
            g = dc.tanh(dc.take(z, 1, 2 * size, 3 * size))
            o = dc.sigmoid(dc.take(z, 1, 3 * size, 4 * size))
            c = f * c + i * g
            h = o * dc.tanh(c)
            outputs.append(h)
        sequence = dc.concat(outputs, axis=0)
    return sequence


def lstm_attention(q_seq: ArrayLike, params: LSTMParams) -> AttentionPair:
    """Attention over time from the 2-column LSTM output.

    Each column is normalised with a softmax over the time axis; column 0 is
    the language attention, column 1 the motor attention.
    """
    out = lstm_forward(q_seq, params)
    if out.shape[1] != 2:
        raise DimensionError(f"LSTM output must have 2 columns, got {out.shape}")
    weights = dc.softmax_over_axis(out, axis=0)
    T = out.shape[0]
    return AttentionPair(
        language=dc.reshape(dc.take(weights, 1, 0, 1), (T,)),
        motor=dc.reshape(dc.take(weights, 1, 1, 2), (T,)),
    )

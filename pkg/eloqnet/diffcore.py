"""
Minimal reverse-mode differentiation on top of numpy.

Values are float64 numpy arrays. Operations executed while a
:class:`ComputeGraph` is active are appended to that graph together with
their vector-Jacobian products; :meth:`ComputeGraph.backward` replays them in
reverse and accumulates into the ``grad`` buffer of every leaf tensor that
requires gradients. Outside of a graph no record is kept, which is the
inference path.

Only the shapes the network needs are supported: element-wise operations
require identical shapes, and the handful of broadcasting patterns used by
the layers (bias along an axis, outer row/column sums) are explicit
operations.
"""

import contextvars
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, GradientCheckError, GraphError

logger = logging.getLogger("eloqnet.diffcore")

Vjp = Callable[[np.ndarray], tuple]

# Gradient checks compare absolute errors below this magnitude
ABSOLUTE_BELOW = 1e-8

_ACTIVE_GRAPH: contextvars.ContextVar[Optional["ComputeGraph"]] = (
    contextvars.ContextVar("eloqnet_active_graph", default=None)
)


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=np.float64)
    array.flags.writeable = False
    return array


class Tensor:
    """A float64 array that can take part in reverse-mode differentiation.

    Leaf tensors are created by the user. When ``requires_grad`` is set the
    leaf owns a ``grad`` buffer of the same shape, accumulated by every
    backward pass until :meth:`zero_grad` is called. Tensors returned by
    operations inside an active graph are marked ``requires_grad`` when any
    input is; their adjoints live in the graph and are not kept.

    Attributes:
        name: Optional label used in reports and checkpoints.
        requires_grad: Whether gradients flow to or through this tensor.
        grad: Gradient accumulator of a leaf, None otherwise.
    """

    def __init__(
        self,
        value: Union[np.ndarray, Sequence, float],
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self._value = _readonly(np.array(value, dtype=np.float64))
        self.requires_grad = requires_grad
        self.name = name
        self._is_leaf = True
        self.grad: Optional[np.ndarray] = (
            np.zeros(self._value.shape) if requires_grad else None
        )

    @classmethod
    def _from_op(cls, value: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out._value = _readonly(value)
        out.requires_grad = requires_grad
        out.name = None
        out._is_leaf = False
        out.grad = None
        return out

    @property
    def value(self) -> np.ndarray:
        """Read-only view of the values."""
        return self._value

    @value.setter
    def value(self, new_value: np.ndarray) -> None:
        new_value = np.array(new_value, dtype=np.float64)
        if new_value.shape != self._value.shape:
            raise DimensionError(
                f"Cannot assign shape {new_value.shape} to tensor of shape "
                f"{self._value.shape}"
            )
        self._value = _readonly(new_value)

    @property
    def shape(self) -> tuple:
        return self._value.shape

    @property
    def ndim(self) -> int:
        return self._value.ndim

    @property
    def size(self) -> int:
        return self._value.size

    def numpy(self) -> np.ndarray:
        return self._value

    def item(self) -> float:
        """Value of a single-entry tensor as a Python float."""
        if self.size != 1:
            raise DimensionError(f"item() needs a single entry, shape is {self.shape}")
        return float(self._value.reshape(-1)[0])

    def zero_grad(self) -> None:
        """Reset the gradient accumulator of a leaf."""
        if self.requires_grad and self._is_leaf:
            self.grad = np.zeros(self._value.shape)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def as_tensor(value: Union[Tensor, np.ndarray, Sequence, float]) -> Tensor:
    """Wrap a constant in a Tensor, passing Tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class _Node:
    op: str
    output: Tensor
    parents: tuple
    vjp: Vjp


class ComputeGraph:
    """Ordered record of the operations of one forward pass.

    Use as a context manager around the forward pass, then call
    :meth:`backward` once::

        with ComputeGraph() as graph:
            loss = model_loss(...)
        graph.backward(loss)

    Graphs are tracked per context, so independent graphs may be built in
    different threads.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False
        self._token = None

    def __enter__(self) -> "ComputeGraph":
        if self._consumed:
            raise GraphError("Cannot reuse a compute graph after backward")
        self._token = _ACTIVE_GRAPH.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_GRAPH.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def operations(self) -> list[str]:
        """Names of the recorded operations in forward order."""
        return [node.op for node in self._nodes]

    def record(self, node: _Node) -> None:
        self._nodes.append(node)

    def backward(self, output: Tensor, seed: Optional[np.ndarray] = None) -> None:
        """Propagate adjoints from ``output`` to every leaf.

        Args:
            output: Tensor produced inside this graph. Usually a scalar.
            seed: Adjoint of ``output``. Defaults to ones.

        Raises:
            GraphError: If the graph was already consumed by a backward pass,
                or ``output`` does not depend on any tensor requiring grad.
        """
        if self._consumed:
            raise GraphError(
                "backward() called twice on the same graph; re-run the forward pass"
            )
        if not output.requires_grad:
            raise GraphError("Output does not depend on any tensor requiring grad")

        seed = np.ones(output.shape) if seed is None else np.asarray(seed, float)
        if seed.shape != output.shape:
            raise DimensionError(
                f"Seed shape {seed.shape} does not match output {output.shape}"
            )

        adjoints: dict[int, np.ndarray] = {id(output): seed}
        leaves: dict[int, Tensor] = {}
        if output._is_leaf:
            leaves[id(output)] = output

        for node in reversed(self._nodes):
            g = adjoints.pop(id(node.output), None)
            if g is None:
                continue
            for parent, parent_grad in zip(node.parents, node.vjp(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + parent_grad
                else:
                    adjoints[key] = parent_grad
                    if parent._is_leaf:
                        leaves[key] = parent

        for key, leaf in leaves.items():
            leaf.grad = leaf.grad + adjoints[key]

        logger.debug(
            f"Backward over {len(self._nodes)} operations reached {len(leaves)} leaves"
        )
        self._consumed = True
        self._nodes.clear()


@contextmanager
def no_grad():
    """Run operations without recording, even inside an active graph."""
    token = _ACTIVE_GRAPH.set(None)
    try:
        yield
    finally:
        _ACTIVE_GRAPH.reset(token)


def _emit(op: str, value: np.ndarray, parents: tuple, vjp: Vjp) -> Tensor:
    graph = _ACTIVE_GRAPH.get()
    track = graph is not None and any(p.requires_grad for p in parents)
    out = Tensor._from_op(value, requires_grad=track)
    if track:
        graph.record(_Node(op, out, parents, vjp))
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _check_axis(op: str, x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _emit(
        "matmul",
        av @ bv,
        (a, b),
        lambda g: (g @ bv.T, av.T @ g),
    )


def _parse_subscripts(subscripts: str, count: int) -> tuple[list[str], str]:
    if "->" not in subscripts or "." in subscripts:
        raise DimensionError(
            f"einsum: explicit output without ellipsis required, got '{subscripts}'"
        )
    lhs, out = subscripts.replace(" ", "").split("->")
    inputs = lhs.split(",")
    if len(inputs) != count:
        raise DimensionError(
            f"einsum: '{subscripts}' names {len(inputs)} operands, got {count}"
        )
    for k, term in enumerate(inputs):
        if len(set(term)) != len(term):
            raise DimensionError(f"einsum: repeated index in operand {k} '{term}'")
        others = out + "".join(t for j, t in enumerate(inputs) if j != k)
        missing = set(term) - set(others)
        if missing:
            raise DimensionError(
                f"einsum: index {sorted(missing)} of operand {k} is summed away "
                "without a partner; not differentiable here"
            )
    return inputs, out


def einsum(subscripts: str, *operands: Tensor) -> Tensor:
    """Differentiable ``np.einsum`` for explicit, non-repeating subscripts.

    Every index of an operand must also appear in the output or in another
    operand, which makes the adjoint of each operand another einsum.
    """
    inputs, out = _parse_subscripts(subscripts, len(operands))
    values = [op.value for op in operands]
    try:
        result = np.einsum(subscripts, *values, optimize=True)
    except ValueError as e:
        shapes = ", ".join(str(v.shape) for v in values)
        raise DimensionError(f"einsum '{subscripts}' on shapes {shapes}: {e}")

    def vjp(g):
        grads = []
        for k, term in enumerate(inputs):
            other_terms = [t for j, t in enumerate(inputs) if j != k]
            other_values = [v for j, v in enumerate(values) if j != k]
            spec = ",".join([out, *other_terms]) + "->" + term
            grads.append(np.einsum(spec, g, *other_values, optimize=True))
        return tuple(grads)

    return _emit(f"einsum[{subscripts}]", np.asarray(result, float), operands, vjp)


# ---------------------------------------------------------------------------
# Element-wise arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _emit("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x: Tensor, factor: float) -> Tensor:
    return _emit("scale", x.value * factor, (x,), lambda g: (g * factor,))


def add_bias(x: Tensor, bias: Tensor, axis: int) -> Tensor:
    """Add a 1-D ``bias`` along ``axis`` of ``x``."""
    axis = _check_axis("add_bias", x, axis)
    if bias.ndim != 1 or bias.shape[0] != x.shape[axis]:
        raise DimensionError(
            f"add_bias: bias {bias.shape} does not fit axis {axis} of {x.shape}"
        )
    shape = [1] * x.ndim
    shape[axis] = -1
    other_axes = tuple(i for i in range(x.ndim) if i != axis)
    return _emit(
        "add_bias",
        x.value + bias.value.reshape(shape),
        (x, bias),
        lambda g: (g, g.sum(axis=other_axes)),
    )


def pair_sum(rows: Tensor, cols: Tensor) -> Tensor:
    """Outer sum ``out[..., i, j] = rows[..., i] + cols[..., j]``."""
    if rows.ndim == 0 or cols.ndim == 0 or rows.shape[:-1] != cols.shape[:-1]:
        raise DimensionError(
            f"pair_sum: leading shapes of {rows.shape} and {cols.shape} differ"
        )
    return _emit(
        "pair_sum",
        rows.value[..., :, None] + cols.value[..., None, :],
        (rows, cols),
        lambda g: (g.sum(axis=-1), g.sum(axis=-2)),
    )


# ---------------------------------------------------------------------------
# Shape manipulation and reductions
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: tuple) -> Tensor:
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} to {shape}")
    original = x.shape
    return _emit("reshape", value, (x,), lambda g: (g.reshape(original),))


def transpose(x: Tensor, axes: Optional[tuple] = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return _emit(
        "transpose",
        np.transpose(x.value, axes),
        (x,),
        lambda g: (np.transpose(g, inverse),),
    )


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    """Sum over one axis, or over everything when ``axis`` is None."""
    if axis is None:
        shape = x.shape
        return _emit(
            "sum", np.asarray(x.value.sum()), (x,), lambda g: (np.full(shape, g),)
        )
    axis = _check_axis("sum", x, axis)
    return _emit(
        "sum",
        x.value.sum(axis=axis),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),),
    )


def take(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``[start, stop)`` along ``axis``."""
    axis = _check_axis("take", x, axis)
    if not 0 <= start < stop <= x.shape[axis]:
        raise DimensionError(
            f"take: range [{start}, {stop}) outside axis {axis} of {x.shape}"
        )
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def vjp(g):
        full = np.zeros(x.shape)
        full[index] = g
        return (full,)

    return _emit("take", x.value[index], (x,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat: nothing to concatenate")
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit(
        "concat",
        value,
        tuple(tensors),
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("stack: nothing to stack")
    try:
        value = np.stack([t.value for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"stack: {e}")
    count = len(tensors)
    return _emit(
        "stack",
        value,
        tuple(tensors),
        lambda g: tuple(np.moveaxis(g, axis, 0)[k] for k in range(count)),
    )


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """``x`` where positive, ``slope * x`` elsewhere.

    The adjoint at exactly zero uses the positive side.
    """
    if not np.isfinite(slope):
        raise ValueError(f"leaky_relu: slope must be finite, got {slope}")
    v = x.value
    local = np.where(v >= 0, 1.0, slope)
    return _emit(
        "leaky_relu", np.where(v > 0, v, slope * v), (x,), lambda g: (g * local,)
    )


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.value)
    return _emit("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.value)
    return _emit("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def log_sigmoid(x: Tensor) -> Tensor:
    """``log(sigmoid(x))`` evaluated as ``-softplus(-x)``."""
    v = x.value
    return _emit(
        "log_sigmoid",
        -np.logaddexp(0.0, -v),
        (x,),
        lambda g: (g * _stable_sigmoid(-v),),
    )


def softmax_over_axis(x: Tensor, axis: int) -> Tensor:
    """Softmax normalising every slice along ``axis``."""
    axis = _check_axis("softmax_over_axis", x, axis)
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    return _emit(
        "softmax",
        s,
        (x,),
        lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),),
    )


def log_softmax_over_axis(x: Tensor, axis: int) -> Tensor:
    axis = _check_axis("log_softmax_over_axis", x, axis)
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - log_norm
    s = np.exp(out)
    return _emit(
        "log_softmax",
        out,
        (x,),
        lambda g: (g - s * g.sum(axis=axis, keepdims=True),),
    )


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradientReport:
    """Outcome of :func:`check_gradients`.

    Attributes:
        max_error: Largest relative error, absolute where both the analytic
            and numeric values are below 1e-8 in magnitude, or relative to
            the check's ``floor`` when one was given.
        tolerance: Threshold the report was judged against.
        checked: Number of parameter entries compared.
        worst: ``(parameter name, flat index)`` of the largest error.
        per_parameter: Largest error per parameter name.
        analytic: Recorded adjoints, keyed by parameter name.
    """

    max_error: float
    tolerance: float
    checked: int
    worst: Optional[tuple[str, int]] = None
    per_parameter: dict[str, float] = field(default_factory=dict)
    analytic: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _named(params: Union[Mapping[str, Tensor], Iterable[Tensor]]) -> dict:
    if isinstance(params, Mapping):
        return dict(params)
    return {(p.name or f"param{k}"): p for k, p in enumerate(params)}


def _scalar(f: Callable[[], Tensor]) -> float:
    with no_grad():
        out = f()
    if out.size != 1:
        raise GradientCheckError(f"Function must be scalar, got shape {out.shape}")
    value = out.item()
    if not np.isfinite(value):
        raise GradientCheckError(f"Function returned a non-finite value: {value}")
    return value


def check_gradients(
    f: Callable[[], Tensor],
    params: Union[Mapping[str, Tensor], Iterable[Tensor]],
    h: float = 1e-6,
    tol: float = 1e-6,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: Optional[float] = None,
) -> GradientReport:
    """Compare recorded adjoints with central finite differences.

    Args:
        f: Deterministic function returning a scalar Tensor built from
            ``params``.
        params: Tensors requiring grad, as a mapping or an iterable.
        h: Finite difference step, within [1e-8, 1e-4].
        tol: Error threshold used by :attr:`GradientReport.passed`.
        max_entries: Check at most this many randomly chosen entries per
            parameter. All entries when None.
        rng: Generator for the entry sampling. Defaults to seed 0.
        floor: Magnitude below which an entry's error is divided by
            ``floor`` instead of its own magnitude. When None, entries whose
            analytic and numeric values are both below 1e-8 are judged by
            their absolute error.

    Returns:
        GradientReport: Errors found.

    Raises:
        ValueError: If ``h`` is outside the allowed range or ``floor`` is
            not positive.
        GradientCheckError: If ``f`` is not scalar or not finite.
    """
    if not 1e-8 <= h <= 1e-4:
        raise ValueError(f"Step h={h} outside [1e-8, 1e-4]")
    if floor is not None and not floor > 0:
        raise ValueError(f"floor must be positive, got {floor}")
    named = _named(params)
    rng = rng if rng is not None else np.random.default_rng(0)

    for p in named.values():
        p.zero_grad()
    with ComputeGraph() as graph:
        out = f()
    if out.size != 1 or not np.all(np.isfinite(out.value)):
        raise GradientCheckError(f"Function must return a finite scalar, got {out}")
    if out.requires_grad:
        graph.backward(out)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros(p.shape))
        for name, p in named.items()
    }

    report = GradientReport(
        max_error=0.0, tolerance=tol, checked=0, analytic=analytic
    )
    for name, p in named.items():
        base = p.value.copy()
        indices = np.arange(base.size)
        if max_entries is not None and base.size > max_entries:
            indices = np.sort(rng.choice(base.size, size=max_entries, replace=False))
        worst_here = 0.0
        try:
            for idx in indices:
                shifted = base.copy()
                shifted.flat[idx] += h
                p.value = shifted
                f_plus = _scalar(f)
                shifted.flat[idx] = base.flat[idx] - h
                p.value = shifted
                f_minus = _scalar(f)
                numeric = (f_plus - f_minus) / (2.0 * h)
                exact = analytic[name].flat[idx]
                error = abs(exact - numeric)
                magnitude = max(abs(exact), abs(numeric))
                if floor is not None:
                    error /= max(magnitude, floor)
                elif magnitude >= ABSOLUTE_BELOW:
                    error /= magnitude
                report.checked += 1
                worst_here = max(worst_here, error)
                if report.worst is None or error > report.max_error:
                    report.max_error = error
                    report.worst = (name, int(idx))
        finally:
            p.value = base
        report.per_parameter[name] = worst_here

    logger.debug(
        f"Gradient check over {report.checked} entries: max error "
        f"{report.max_error:.3e} at {report.worst}"
    )
    return report

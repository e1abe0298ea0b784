"""Dense tensors with reverse-mode automatic differentiation.

The primitive set is deliberately closed and small: matrix multiply,
broadcasting add/multiply, sigmoid, tanh, softmax / concat / slice over an
axis, embedding gather, scalar multiply, full-reduction sum, and elementwise
log.  That is exactly enough for GRUs, bilinear attention, and a
generate-or-copy output layer, and keeps every backward rule auditable.

A ``Tape`` records primitive applications in execution order; ``backward``
replays the records in reverse.  Tensors are confined to a single tape (and
thread); untracked tensors act as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeMismatch",
    "NonFiniteValues",
    "apply_primitive",
    "matmul",
    "add",
    "mul",
    "smul",
    "sigmoid",
    "tanh",
    "log",
    "softmax",
    "concat",
    "slice_axis",
    "gather",
    "sum_all",
    "backward",
    "grad_for",
    "finite_difference_check",
]


class ShapeMismatch(ValueError):
    """Raised when primitive inputs violate the primitive's shape rule."""


class NonFiniteValues(FloatingPointError):
    """Raised when a forward primitive produces NaN or Inf."""


class Tensor:
    """An n-dimensional value array, optionally tracked on a Tape.

    ``values`` is the backing numpy array (row-major).  ``node_id`` is the
    handle into the owning tape, or None for untracked constants.
    """

    __slots__ = ("values", "tape", "node_id")

    def __init__(self, values, dtype=None):
        arr = np.asarray(values, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.values = arr
        self.tape: Tape | None = None
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f", node={self.node_id}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Operator sugar over the primitive set.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, smul(-1.0, other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(float(other), self)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return smul(float(other), self)
        return NotImplemented

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


@dataclass(slots=True)
class _Record:
    """One primitive application: op kind, operand node ids, saved arrays."""

    kind: str
    input_ids: tuple[int | None, ...]
    input_values: tuple[np.ndarray, ...]
    output_id: int
    output_values: np.ndarray
    params: dict


@dataclass
class Tape:
    """Ordered, replayable record of primitive applications.

    Records are appended in execution order, so inputs of a record always
    precede it; the backward pass walks them in exact reverse order.
    A tape and its tensors belong to one thread of execution.
    """

    records: list[_Record] = field(default_factory=list)
    _next_id: int = 0
    _leaves: dict[int, Tensor] = field(default_factory=dict)

    def watch(self, tensor: Tensor) -> Tensor:
        """Register ``tensor`` as a tracked leaf of this tape.

        A tensor is tracked by at most one tape; watching it here removes
        it from any previous tape.
        """
        if tensor.tape is self:
            return tensor
        if tensor.tape is not None:
            tensor.tape._leaves.pop(tensor.node_id, None)
        tensor.tape = self
        tensor.node_id = self._new_id()
        self._leaves[tensor.node_id] = tensor
        return tensor

    def leaf(self, values, dtype=None) -> Tensor:
        """Create and watch a new leaf tensor."""
        return self.watch(Tensor(values, dtype=dtype))

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def _record(self, kind, inputs, input_values, out: Tensor, params) -> None:
        out.tape = self
        out.node_id = self._new_id()
        self.records.append(
            _Record(
                kind=kind,
                input_ids=tuple(t.node_id for t in inputs),
                input_values=tuple(input_values),
                output_id=out.node_id,
                output_values=out.values,
                params=params,
            )
        )


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing broadcast axes."""
    while grad.ndim > len(shape):
        # asarray: reducing a 1-D array yields a numpy scalar, which would
        # silently break in-place gradient accumulation downstream.
        grad = np.asarray(grad.sum(axis=0))
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_last(x: np.ndarray) -> np.ndarray:
    # Max-subtraction keeps exp() in range; masked scores of -1e9 underflow
    # to exactly zero weight.
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Primitive registry: per-kind arity check, shape rule + forward, backward.
# Backward functions return one gradient per input (None for ints/constants
# that cannot receive gradient, e.g. gather indices).


def _check_matmul(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul expects rank 1 or 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != (b.shape[0] if b.ndim >= 1 else None):
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")


def _matmul_backward(g, a, b):
    if a.ndim == 2 and b.ndim == 2:
        return g @ b.T, a.T @ g
    if a.ndim == 1 and b.ndim == 2:
        return g @ b.T, np.outer(a, g)
    if a.ndim == 2 and b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g * b, g * a  # 1-D inner product, scalar g


def _concat_backward(g, arrays, axis):
    grads = []
    start = 0
    for arr in arrays:
        width = arr.shape[axis]
        index = [slice(None)] * g.ndim
        index[axis] = slice(start, start + width)
        grads.append(g[tuple(index)])
        start += width
    return grads


def _slice_backward(g, x, axis, start, stop):
    out = np.zeros_like(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    out[tuple(index)] = g
    return out


def _gather_backward(g, table, ids):
    out = np.zeros_like(table)
    np.add.at(out, ids, g)
    return out


def _forward(kind: str, values: list[np.ndarray], params: dict) -> np.ndarray:
    if kind == "matmul":
        a, b = values
        _check_matmul(a, b)
        return a @ b
    if kind == "add" or kind == "mul":
        a, b = values
        try:
            return a + b if kind == "add" else a * b
        except ValueError:
            raise ShapeMismatch(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None
    if kind == "smul":
        return params["c"] * values[0]
    if kind == "sigmoid":
        return _stable_sigmoid(values[0])
    if kind == "tanh":
        return np.tanh(values[0])
    if kind == "log":
        # log(0) legitimately hits -inf before the finiteness check rejects
        # it; silence numpy's own warning on the way.
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(values[0])
    if kind == "softmax":
        if values[0].size == 0:
            raise ShapeMismatch("softmax: empty input")
        return _softmax_last(values[0])
    if kind == "concat":
        axis = params["axis"]
        base = values[0].shape
        for arr in values[1:]:
            if len(arr.shape) != len(base):
                raise ShapeMismatch(f"concat: mixed ranks {base} vs {arr.shape}")
            if arr.shape[:axis] + arr.shape[axis + 1 :] != base[:axis] + base[axis + 1 :]:
                raise ShapeMismatch(f"concat: incompatible shapes {base} vs {arr.shape}")
        return np.concatenate(values, axis=axis)
    if kind == "slice":
        x = values[0]
        axis, start, stop = params["axis"], params["start"], params["stop"]
        if not (0 <= start <= stop <= x.shape[axis]):
            raise ShapeMismatch(f"slice: bounds [{start}:{stop}] invalid for axis {axis} of {x.shape}")
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, stop)
        return x[tuple(index)].copy()
    if kind == "gather":
        table = values[0]
        ids = params["ids"]
        if table.ndim != 2:
            raise ShapeMismatch(f"gather: table must be rank 2, got {table.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise ShapeMismatch(f"gather: index out of range for table of {table.shape[0]} rows")
        return table[ids]
    if kind == "sum":
        return np.asarray(values[0].sum())
    raise ValueError(f"unknown primitive kind {kind!r}")


def _backward_one(record: _Record, grad_out: np.ndarray) -> list[np.ndarray | None]:
    kind = record.kind
    vals = record.input_values
    out = record.output_values
    p = record.params
    if kind == "matmul":
        return list(_matmul_backward(grad_out, vals[0], vals[1]))
    if kind == "add":
        return [_unbroadcast(grad_out, vals[0].shape), _unbroadcast(grad_out, vals[1].shape)]
    if kind == "mul":
        return [
            _unbroadcast(grad_out * vals[1], vals[0].shape),
            _unbroadcast(grad_out * vals[0], vals[1].shape),
        ]
    if kind == "smul":
        return [p["c"] * grad_out]
    if kind == "sigmoid":
        return [grad_out * out * (1.0 - out)]
    if kind == "tanh":
        return [grad_out * (1.0 - out * out)]
    if kind == "log":
        return [grad_out / vals[0]]
    if kind == "softmax":
        inner = (grad_out * out).sum(axis=-1, keepdims=True)
        return [out * (grad_out - inner)]
    if kind == "concat":
        return _concat_backward(grad_out, vals, p["axis"])
    if kind == "slice":
        return [_slice_backward(grad_out, vals[0], p["axis"], p["start"], p["stop"])]
    if kind == "gather":
        return [_gather_backward(grad_out, vals[0], p["ids"])]
    if kind == "sum":
        return [np.broadcast_to(grad_out, vals[0].shape).astype(vals[0].dtype, copy=True)]
    raise ValueError(f"unknown primitive kind {kind!r}")


def _all_finite(a: np.ndarray) -> bool:
    # min/max propagate NaN and expose infinities without allocating a
    # boolean mask; much cheaper than isfinite().all() on small arrays.
    if a.size == 0:
        return True
    lo = a.min()
    hi = a.max()
    return lo == lo and -np.inf < lo and hi < np.inf


def apply_primitive(kind: str, inputs: Sequence[Tensor], **params) -> Tensor:
    """Apply one primitive op, recording it when any input is tracked."""
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ValueError("inputs belong to different tapes")
            tape = t.tape
    values = [t.values for t in inputs]
    out_values = np.asarray(_forward(kind, values, params))
    if not _all_finite(out_values):
        raise NonFiniteValues(f"primitive {kind!r} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.values = out_values
    out.tape = None
    out.node_id = None
    if tape is not None:
        tape._record(kind, inputs, values, out, params)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("matmul", [a, b])


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("add", [a, b])


def mul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("mul", [a, b])


def smul(c: float, t: Tensor) -> Tensor:
    return apply_primitive("smul", [t], c=float(c))


def sigmoid(t: Tensor) -> Tensor:
    return apply_primitive("sigmoid", [t])


def tanh(t: Tensor) -> Tensor:
    return apply_primitive("tanh", [t])


def log(t: Tensor) -> Tensor:
    return apply_primitive("log", [t])


def softmax(t: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction."""
    return apply_primitive("softmax", [t])


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat: no inputs")
    axis = axis % tensors[0].values.ndim
    return apply_primitive("concat", list(tensors), axis=axis)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % t.values.ndim
    return apply_primitive("slice", [t], axis=axis, start=start, stop=stop)


def gather(table: Tensor, ids) -> Tensor:
    """Select rows of ``table`` by integer index; gradient scatter-adds."""
    ids = np.asarray(ids, dtype=np.int64)
    return apply_primitive("gather", [table], ids=ids)


def sum_all(t: Tensor) -> Tensor:
    """Sum every entry into a scalar tensor."""
    return apply_primitive("sum", [t])


def backward(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    """Accumulate d(loss)/d(leaf) for every tracked leaf of ``tape``.

    Returns a map from leaf node id to its gradient tensor; leaves the loss
    does not depend on receive zero gradients.
    """
    if loss.tape is not tape or loss.node_id is None:
        raise ValueError("loss tensor is not tracked on this tape")
    if loss.values.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.values)}
    for record in reversed(tape.records):
        g_out = grads.pop(record.output_id, None)
        if g_out is None:
            continue
        for input_id, g_in in zip(record.input_ids, _backward_one(record, g_out)):
            if input_id is None or g_in is None:
                continue
            g_in = np.asarray(g_in)
            existing = grads.get(input_id)
            if existing is None:
                # Backward rules may hand back g_out itself (add) or a view
                # of it (concat); those must be copied before later in-place
                # accumulation, or sibling gradients get corrupted.
                if g_in is g_out or g_in.base is not None:
                    g_in = g_in.copy()
                grads[input_id] = g_in
            else:
                existing += g_in
    result: dict[int, Tensor] = {}
    for node_id, leaf in tape._leaves.items():
        g = grads.get(node_id)
        if g is None:
            g = np.zeros_like(leaf.values)
        result[node_id] = Tensor(g)
    return result


def grad_for(grad_map: Mapping[int, Tensor], tensor: Tensor) -> np.ndarray:
    """Look up a leaf tensor's gradient in a backward() result."""
    if tensor.node_id is None:
        raise ValueError("tensor is not tracked")
    return grad_map[tensor.node_id].values


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    epsilon: float = 1e-4,
) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must deterministically build a fresh tape over the given leaf
    tensors and return a scalar loss.  All parameters must be float64;
    central differences need the headroom.  Returns the maximum relative
    error max(|analytic - numeric|) / max(|analytic|, |numeric|, 1e-8)
    over every parameter entry.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    for name, t in params.items():
        if t.dtype != np.float64:
            raise ValueError(f"finite_difference_check requires float64 params ({name} is {t.dtype})")

    loss = f()
    if not np.isfinite(loss.values).all():
        raise NonFiniteValues("loss is not finite")
    grad_map = backward(loss.tape, loss)
    analytic = {name: grad_for(grad_map, t).copy() for name, t in params.items()}

    def eval_loss() -> float:
        out = f()
        v = float(out.values.reshape(-1)[0])
        if not np.isfinite(v):
            raise NonFiniteValues("loss is not finite during finite differencing")
        return v

    worst = 0.0
    for name, t in params.items():
        flat = t.values.reshape(-1)
        g_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + epsilon
            up = eval_loss()
            flat[i] = saved - epsilon
            down = eval_loss()
            flat[i] = saved
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(g_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(g_flat[i] - numeric) / denom)
    return worst

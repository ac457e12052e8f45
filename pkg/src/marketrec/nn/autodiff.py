"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Ops applied while a :class:`Tape` is active append a record holding the
output, its inputs and a vector-Jacobian product.  The VJPs are themselves
written with the same ops, so gradients can be differentiated again when
``create_graph=True`` (used by second-order MAML).

Typical use::

    params = {"w": Tensor(w, requires_grad=True)}
    with Tape() as tape:
        loss = bce_loss(sigmoid(params["w"] @ x), y)
    grads = tape.gradient(loss, params)
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "backward",
    "no_record",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "elementwise_mul",
    "matmul",
    "transpose",
    "outer",
    "affine",
    "take",
    "index_add",
    "concat",
    "relu",
    "sigmoid",
    "log",
    "reciprocal",
    "clamp",
    "tsum",
    "mean",
    "sum_to",
    "broadcast_to",
    "bce_loss",
    "BCE_CLAMP",
]

BCE_CLAMP = 1e-12



class _State(threading.local):
    def __init__(self) -> None:
        self.tapes: list[Tape] = []
        self.suspended = 0


_state = _State()


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""


class Tensor:
    """A float64 array that may participate in a recorded computation."""

    __slots__ = ("value", "requires_grad", "name", "_tape", "__weakref__")
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value.item())

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.value!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


class _Record(NamedTuple):
    output: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[Tensor], Sequence[Tensor | None]]


class Tape:
    """Ordered record of the ops applied while the tape is active."""

    def __init__(self) -> None:
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        for rec in self.records:
            rec.output._tape = None
        self.records.clear()

    def _append(self, out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        out._tape = self
        self.records.append(_Record(out, inputs, vjp))

    def gradient(self, loss: Tensor, sources, create_graph: bool = False):
        """Gradient of scalar ``loss`` with respect to ``sources``.

        ``sources`` may be a single tensor, a sequence or a mapping; the
        result has the same structure.  Sources the loss does not reach get
        zeros.  Plain arrays are returned unless ``create_graph`` is set, in
        which case the gradients are tensors recorded on this tape.
        """
        if not isinstance(loss, Tensor) or loss._tape is not self:
            raise ValueError("loss was not produced on this tape")
        if loss.size != 1:
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")

        grads: dict[int, Tensor] = {id(loss): Tensor(np.ones_like(loss.value))}
        n = len(self.records)
        ctx = _activate(self) if create_graph else no_record()
        with ctx:
            for rec in reversed(self.records[:n]):
                g = grads.get(id(rec.output))
                if g is None:
                    continue
                for x, gx in zip(rec.inputs, rec.vjp(g)):
                    if gx is None or not x.requires_grad:
                        continue
                    prev = grads.get(id(x))
                    grads[id(x)] = gx if prev is None else add(prev, gx)

        def pick(t: Tensor):
            g = grads.get(id(t))
            if g is None:
                g = Tensor(np.zeros_like(t.value))
            return g if create_graph else g.value

        if isinstance(sources, Tensor):
            return pick(sources)
        if isinstance(sources, Mapping):
            return {k: pick(t) for k, t in sources.items()}
        return [pick(t) for t in sources]

    def leaves(self, loss: Tensor) -> list[Tensor]:
        """Grad-requiring leaf tensors that ``loss`` depends on."""
        seen: dict[int, Tensor] = {}
        live = {id(loss)}
        for rec in reversed(self.records):
            if id(rec.output) not in live:
                continue
            for x in rec.inputs:
                if not x.requires_grad:
                    continue
                live.add(id(x))
                if x._tape is None:
                    seen.setdefault(id(x), x)
        return list(seen.values())


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients for every grad-requiring leaf reachable from ``loss``."""
    leaves = tape.leaves(loss)
    grads = tape.gradient(loss, leaves)
    return dict(zip(leaves, grads))


@contextlib.contextmanager
def no_record() -> Iterator[None]:
    """Run ops without recording them on any tape."""
    _state.suspended += 1
    try:
        yield
    finally:
        _state.suspended -= 1


@contextlib.contextmanager
def _activate(tape: Tape) -> Iterator[None]:
    saved = _state.suspended
    _state.suspended = 0
    _state.tapes.append(tape)
    try:
        yield
    finally:
        _state.tapes.pop()
        _state.suspended = saved


def _recording() -> Tape | None:
    if _state.suspended or not _state.tapes:
        return None
    return _state.tapes[-1]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(value)
    tape = _recording()
    if tape is not None and any(x.requires_grad for x in inputs):
        out.requires_grad = True
        tape._append(out, inputs, vjp)
    return out


# -- shape plumbing ---------------------------------------------------------


def _sum_to_shape(value: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if value.shape == shape:
        return value
    lead = value.ndim - len(shape)
    if lead:
        value = value.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and value.shape[i] != 1)
    if axes:
        value = value.sum(axis=axes, keepdims=True)
    return value.reshape(shape)


def sum_to(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    in_shape = x.shape
    return _make(_sum_to_shape(x.value, shape), (x,), lambda g: (broadcast_to(g, in_shape),))


def broadcast_to(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    in_shape = x.shape
    value = np.broadcast_to(x.value, shape).copy()
    return _make(value, (x,), lambda g: (sum_to(g, in_shape),))


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- arithmetic -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b), lambda g: (sum_to(g, sa), sum_to(neg(g), sb)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def vjp(g):
        ga = sum_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.value * b.value, (a, b), vjp)


def elementwise_mul(a, b) -> Tensor:
    """Hadamard product of equally shaped operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise_mul: shapes {a.shape} and {b.shape} differ")
    return mul(a, b)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError("matmul supports 1-D and 2-D operands only")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")

    def vjp(g):
        ga = gb = None
        if a.ndim == 2 and b.ndim == 2:
            if a.requires_grad:
                ga = matmul(g, transpose(b))
            if b.requires_grad:
                gb = matmul(transpose(a), g)
        elif a.ndim == 2:
            if a.requires_grad:
                ga = outer(g, b)
            if b.requires_grad:
                gb = matmul(transpose(a), g)
        elif b.ndim == 2:
            if a.requires_grad:
                ga = matmul(b, g)
            if b.requires_grad:
                gb = outer(a, g)
        else:
            if a.requires_grad:
                ga = mul(g, b)
            if b.requires_grad:
                gb = mul(g, a)
        return ga, gb

    return _make(a.value @ b.value, (a, b), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return _make(a.value.T.copy(), (a,), lambda g: (transpose(g),))


def outer(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError("outer expects vectors")

    def vjp(g):
        ga = matmul(g, b) if a.requires_grad else None
        gb = matmul(transpose(g), a) if b.requires_grad else None
        return ga, gb

    return _make(np.outer(a.value, b.value), (a, b), vjp)


def affine(W, b, x) -> Tensor:
    """``W x + b`` for a vector ``x``, or row-wise for a batch ``x``.

    ``W`` is ``(out, in)`` so the result has ``out`` entries per row.
    """
    W, b, x = as_tensor(W), as_tensor(b), as_tensor(x)
    if W.ndim != 2 or b.ndim != 1:
        raise ShapeError("affine expects a matrix W and a vector b")
    if W.shape[1] != x.shape[-1]:
        raise ShapeError(f"affine: W has {W.shape[1]} columns but x has length {x.shape[-1]}")
    if b.shape[0] != W.shape[0]:
        raise ShapeError(f"affine: b has length {b.shape[0]} but W has {W.shape[0]} rows")
    return add(matmul(x, transpose(W)), b)


# -- indexing ---------------------------------------------------------------


def take(table, idx) -> Tensor:
    """Rows ``table[idx]``; the gradient scatters back into the table."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.intp)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"row index out of range for table with {n} rows")
    return _make(np.take(table.value, idx, axis=0), (table,), lambda g: (index_add(g, idx, n),))


SMALL_TABLE = 32  # one-hot matmul below this many rows, bincount above


def index_add(g, idx, n_rows: int) -> Tensor:
    """Scatter-add rows of ``g`` into a zero table with ``n_rows`` rows."""
    g = as_tensor(g)
    idx = np.asarray(idx, dtype=np.intp)
    tail = g.shape[idx.ndim:]
    width = int(np.prod(tail, dtype=np.intp))
    rows = idx.ravel()
    vals = g.value.reshape(rows.size, width)
    # both paths are several times faster than np.add.at
    if n_rows <= SMALL_TABLE:
        out = (rows == np.arange(n_rows)[:, None]).astype(np.float64) @ vals
    else:
        flat = (rows[:, None] * width + np.arange(width)).ravel()
        out = np.bincount(flat, weights=vals.ravel(), minlength=n_rows * width)
    out = out.reshape((n_rows,) + tail)
    return _make(out, (g,), lambda gg: (take(gg, idx),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    value = np.concatenate([p.value for p in parts], axis=axis)
    ax = axis % value.ndim
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])

    def vjp(g):
        return tuple(
            _slice(g, ax, int(bounds[k]), int(bounds[k + 1])) if p.requires_grad else None
            for k, p in enumerate(parts)
        )

    return _make(value, tuple(parts), vjp)


def _slice(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    total = x.shape[axis]
    return _make(x.value[tuple(sl)], (x,), lambda g: (_pad(g, axis, start, total),))


def _pad(x: Tensor, axis: int, start: int, total: int) -> Tensor:
    shape = list(x.shape)
    shape[axis] = total
    out = np.zeros(shape, dtype=np.float64)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + x.shape[axis])
    out[tuple(sl)] = x.value
    stop = start + x.shape[axis]
    return _make(out, (x,), lambda g: (_slice(g, axis, start, stop),))


# -- nonlinearities ---------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = Tensor((x.value > 0).astype(np.float64))
    return _make(x.value * mask.value, (x,), lambda g: (mul(g, mask),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    holder: list[Tensor] = []

    def vjp(g):
        out = holder[0]
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _make(s, (x,), vjp)
    holder.append(out)
    return out


def reciprocal(x) -> Tensor:
    x = as_tensor(x)
    holder: list[Tensor] = []

    def vjp(g):
        r = holder[0]
        return (neg(mul(g, mul(r, r))),)

    out = _make(1.0 / x.value, (x,), vjp)
    holder.append(out)
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.value), (x,), lambda g: (mul(g, reciprocal(x)),))


def clamp(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    mask = Tensor(((x.value >= lo) & (x.value <= hi)).astype(np.float64))
    return _make(np.clip(x.value, lo, hi), (x,), lambda g: (mul(g, mask),))


# -- reductions -------------------------------------------------------------


def tsum(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _make(np.asarray(x.value.sum()), (x,), lambda g: (broadcast_to(g, shape),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    return mul(tsum(x), 1.0 / max(x.size, 1))


def bce_loss(y_hat, y) -> Tensor:
    """Mean binary cross-entropy of probabilities ``y_hat`` against 0/1 labels.

    Probabilities are clamped to ``[BCE_CLAMP, 1 - BCE_CLAMP]`` before the log.
    """
    p = clamp(as_tensor(y_hat), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError(f"bce_loss: labels {y.shape} vs predictions {p.shape}")
    ll = add(mul(y, log(p)), mul(1.0 - y, log(sub(1.0, p))))
    return neg(mean(ll))

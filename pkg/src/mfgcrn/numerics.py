"""Dense tensors with a reverse-mode tape.

Every operation returns a new :class:`Tensor` holding a numpy array and a
closure that maps the output gradient to gradients of its parents. Graphs are
built dynamically on each forward pass; :func:`reverse_accumulate` walks them
in reverse topological order and deposits parameter gradients into a
:class:`ParameterStore`.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float64


class Tensor:
    __slots__ = ("value", "parents", "backward", "slot", "requires_grad")

    def __init__(self, value, parents=(), backward=None, slot=None, requires_grad=None):
        self.value = np.asarray(value)
        if self.value.dtype.kind != "f":
            self.value = self.value.astype(DEFAULT_DTYPE)
        self.parents = tuple(parents)
        self.backward = backward
        self.slot = slot
        if requires_grad is None:
            requires_grad = slot is not None or any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        tag = f", slot={self.slot!r}" if self.slot else ""
        return f"Tensor(shape={self.shape}{tag})"

    def numpy(self):
        return self.value

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=DEFAULT_DTYPE), requires_grad=False)


def node(value, parents, backward) -> Tensor:
    """Record a custom op; ``backward(g)`` returns one gradient (or None) per parent."""
    return _node(value, [as_tensor(p) for p in parents], backward)


def _node(value, parents, backward):
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=False)
    return Tensor(value, parents, backward, requires_grad=True)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, name):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not conform") from None


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None
    av, bv = a.value, b.value

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
        return ga, gb

    return _node(out, (a, b), backward)


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    return _node(np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Hadamard product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "hadamard")
    av, bv = a.value, b.value

    def backward(g):
        return (
            _unbroadcast(g * bv, av.shape) if a.requires_grad else None,
            _unbroadcast(g * av, bv.shape) if b.requires_grad else None,
        )

    return _node(av * bv, (a, b), backward)


hadamard = mul


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.value * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.value)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _node(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.value)
    return _node(np.abs(a.value), (a,), lambda g: (g * sign,))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along the last axis; all other dimensions must agree."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of an empty list")
    base = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(base) or t.shape[:-1] != base[:-1]:
            raise DimensionError(f"concat: shapes {base} and {t.shape} differ outside the last axis")
    if axis not in (-1, len(base) - 1):
        raise DimensionError("concat only supports the last axis")
    sizes = np.cumsum([t.shape[-1] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=-1))

    return _node(np.concatenate([t.value for t in ts], axis=-1), ts, backward)


concat_last_axis = concat


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name; mirrors the gate vocabulary used by the recurrent cell."""
    table = {
        "sigmoid": sigmoid,
        "tanh": tanh,
        "relu": relu,
        "hadamard": mul,
        "add": add,
        "concat_last_axis": lambda *ts: concat(ts),
    }
    try:
        fn = table[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ----------------------------------------------------------------------------
# shape and reduction


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _node(np.stack([t.value for t in ts], axis=axis), ts, backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def take(a, index: int, axis: int = 0) -> Tensor:
    """Select one slice along ``axis`` (the axis is dropped)."""
    a = as_tensor(a)
    old, dt = a.shape, a.value.dtype

    def backward(g):
        full = np.zeros(old, dtype=dt)
        idx = [slice(None)] * len(old)
        idx[axis] = index
        full[tuple(idx)] = g
        return (full,)

    return _node(np.take(a.value, index, axis=axis), (a,), backward)


def total(a) -> Tensor:
    """Sum of all entries, as a 0-d tensor."""
    a = as_tensor(a)
    old = a.shape
    return _node(np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, old).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.value.size
    return scale(total(a), 1.0 / n)


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    old = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, old).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), backward)


# ----------------------------------------------------------------------------
# normalisations


def row_softmax(e) -> Tensor:
    """Softmax over the last axis with per-row max subtraction."""
    e = as_tensor(e)
    z = e.value - e.value.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (e,), backward)


softmax = row_softmax


def sentinel_normalize(e, s) -> Tensor:
    """Row normalisation with a non-negative sentinel in the denominator.

    ``out[i, j] = exp(e[i, j]) / (s[i] + sum_o exp(e[i, o]))``. ``e`` is
    (..., n, n) and ``s`` is (..., n, 1). The row max ``M`` is subtracted from
    both terms so the denominator is ``s * exp(-M) + sum exp(e - M)``.
    """
    e, s = as_tensor(e), as_tensor(s)
    if s.shape != e.shape[:-1] + (1,):
        raise DimensionError(f"sentinel shape {s.shape} does not match scores {e.shape}")
    m = e.value.max(axis=-1, keepdims=True)
    num = np.exp(e.value - m)
    shrink = np.exp(-m)
    denom = s.value * shrink + num.sum(axis=-1, keepdims=True)
    a = num / denom

    def backward(g):
        ga = (g * a).sum(axis=-1, keepdims=True)
        ge = a * (g - ga) if e.requires_grad else None
        gs = -ga * shrink / denom if s.requires_grad else None
        return ge, gs

    return _node(a, (e, s), backward)


# ----------------------------------------------------------------------------
# parameters and reverse accumulation


class ParameterStore:
    """Named parameter slots, each with a value and a same-shaped gradient."""

    def __init__(self, dtype=DEFAULT_DTYPE):
        self.dtype = np.dtype(dtype)
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, path: str, value) -> None:
        if path in self._values:
            raise ContractError(f"parameter {path!r} registered twice")
        arr = np.array(value, dtype=self.dtype)
        self._values[path] = arr
        self._grads[path] = np.zeros_like(arr)

    def __contains__(self, path):
        return path in self._values

    def __len__(self):
        return len(self._values)

    def paths(self) -> list[str]:
        return sorted(self._values)

    def items(self):
        for p in self.paths():
            yield p, self._values[p]

    def value(self, path: str) -> np.ndarray:
        return self._values[path]

    def grad(self, path: str) -> np.ndarray:
        return self._grads[path]

    def set_value(self, path: str, value) -> None:
        arr = np.asarray(value, dtype=self.dtype)
        if arr.shape != self._values[path].shape:
            raise DimensionError(f"{path}: shape {arr.shape} != {self._values[path].shape}")
        self._values[path] = arr.copy()

    def tensor(self, path: str) -> Tensor:
        return Tensor(self._values[path], slot=path)

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def grads(self) -> dict[str, np.ndarray]:
        return {p: self._grads[p] for p in self.paths()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p: v.copy() for p, v in self.items()}

    def load(self, values: dict) -> None:
        missing = set(self._values) ^ set(values)
        if missing:
            raise ContractError(f"parameter sets differ: {sorted(missing)}")
        for p, v in values.items():
            self.set_value(p, v)

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore(dtype)
        for p, v in self.items():
            out.add(p, v)
        return out

    def num_scalars(self) -> int:
        return sum(v.size for v in self._values.values())


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def reverse_accumulate(loss: Tensor, store: ParameterStore | None = None) -> dict[str, np.ndarray]:
    """Back-propagate a scalar ``loss`` and fill the store's gradients.

    Gradients are zeroed first, so slots not reached by ``loss`` end at zero.
    Returns the per-slot gradient dict.
    """
    if loss.value.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if store is not None:
        store.zero_grad()
    slot_grads: dict[str, np.ndarray] = {}
    if not loss.requires_grad:
        return store.grads() if store is not None else slot_grads
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.slot is not None:
            if node.slot in slot_grads:
                slot_grads[node.slot] = slot_grads[node.slot] + g
            else:
                slot_grads[node.slot] = g
        if node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if store is not None:
        for path, g in slot_grads.items():
            store.grad(path)[...] = g
        return store.grads()
    return slot_grads


def finite_diff_gradient(
    f: Callable[[ParameterStore], float],
    store: ParameterStore,
    h: float = 1e-5,
    paths: Iterable[str] | None = None,
) -> dict[str, np.ndarray]:
    """Central differences ``(f(θ+h) - f(θ-h)) / 2h`` for every scalar entry."""
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    out = {}
    for path in paths if paths is not None else store.paths():
        theta = store.value(path)
        grad = np.zeros_like(theta)
        flat, gflat = theta.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(store))
            flat[i] = orig - h
            fm = float(f(store))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        out[path] = grad
    return out


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor), elementwise."""
    a, b = np.asarray(a), np.asarray(b)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))

"""Dense float64 tensors with define-by-run reverse-mode differentiation.

A :class:`Tape` records every primitive applied to a tensor it watches.
Operations on untracked tensors run eagerly and record nothing, so the same
functions serve both the training path and plain inference.

    >>> tape = Tape()
    >>> x = tape.watch(Tensor([2.0]))
    >>> y = tape.watch(Tensor([3.0]))
    >>> loss = sum_(x * y)
    >>> backward(tape, loss)
    >>> x.grad, y.grad
    (array([3.]), array([2.]))
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

SURROGATE_KINDS = ("triangle", "sigmoid-derivative", "rectangle")


class Tensor:
    """Row-major float64 array with an optional gradient slot.

    ``tape`` and ``node_id`` are set only for tensors recorded on a tape.
    """

    __slots__ = ("data", "grad", "tape", "node_id")

    def __init__(self, data, tape=None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ContractError("tensor data must be finite")
        self.data = arr
        self.grad = None
        self.tape = tape
        self.node_id = None

    @classmethod
    def _wrap(cls, arr):
        # internal fast path: arr is already a fresh float64 array
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.tape = None
        t.node_id = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tracked = f", node={self.node_id}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tracked})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    vjp: Callable


class Tape:
    """Ordered record of primitive operations.

    Nodes are appended as operations execute, so inputs always precede the
    node that consumes them.
    """

    def __init__(self, rng_seed=0):
        self.rng_seed = int(rng_seed)
        self.nodes: list[Node] = []
        self.tensors: list[Tensor] = []

    def _register(self, t):
        if t.tape is not None and t.tape is not self:
            raise ContractError("tensor is already recorded on another tape")
        if t.tape is None:
            t.tape = self
            t.node_id = len(self.tensors)
            self.tensors.append(t)
        return t

    def watch(self, t):
        """Mark ``t`` as a differentiable leaf and return it."""
        if not isinstance(t, Tensor):
            t = Tensor(t)
        return self._register(t)

    def record(self, inputs, out, vjp):
        self._register(out)
        self.nodes.append(Node(tuple(inputs), out, vjp))
        return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise ContractError("operands are recorded on different tapes")
    return tape


def _emit(arr, inputs, vjp):
    out = Tensor._wrap(arr)
    tape = _tape_of(*inputs)
    if tape is not None:
        tape.record(inputs, out, vjp)
    return out


def _check_same(a, b, opname):
    if a.shape != b.shape:
        raise DimensionError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


# --- linear algebra -------------------------------------------------------


def matmul(a, b):
    """Matrix product of ``a[m×k]`` and ``b[k×n]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add_bias(a, bias):
    """Add a row vector ``bias[n]`` to every row of ``a[m×n]``."""
    a, bias = as_tensor(a), as_tensor(bias)
    if a.data.ndim != 2 or bias.shape != (a.shape[1],):
        raise DimensionError(f"add_bias: bias {bias.shape} does not fit rows of {a.shape}")
    return _emit(a.data + bias.data, (a, bias), lambda g: (g, g.sum(axis=0)))


# --- elementwise ----------------------------------------------------------


def add(a, b):
    a = as_tensor(a)
    if isinstance(b, Tensor):
        _check_same(a, b, "add")
        return _emit(a.data + b.data, (a, b), lambda g: (g, g))
    c = float(b)
    return _emit(a.data + c, (a,), lambda g: (g,))


def sub(a, b):
    a = as_tensor(a)
    if isinstance(b, Tensor):
        _check_same(a, b, "sub")
        return _emit(a.data - b.data, (a, b), lambda g: (g, -g))
    c = float(b)
    return _emit(a.data - c, (a,), lambda g: (g,))


def mul(a, b):
    a = as_tensor(a)
    if isinstance(b, Tensor):
        _check_same(a, b, "mul")
        A, B = a.data, b.data
        return _emit(A * B, (a, b), lambda g: (g * B, g * A))
    return scale(a, b)


def scale(a, c):
    """Multiply by a Python scalar."""
    a = as_tensor(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def neg(a):
    return scale(a, -1.0)


def clamp(a, lo=None, hi=None):
    """Clip into ``[lo, hi]``; gradient passes only where no bound is active."""
    a = as_tensor(a)
    A = a.data
    out = np.clip(A, lo, hi)
    inside = np.ones(A.shape, dtype=bool)
    if lo is not None:
        inside &= A >= lo
    if hi is not None:
        inside &= A <= hi
    return _emit(out, (a,), lambda g: (g * inside,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ContractError("log of non-positive value; clamp first")
    A = a.data
    return _emit(np.log(A), (a,), lambda g: (g / A,))


def sqrt(a):
    """Square root; the gradient at exactly zero is taken as zero."""
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ContractError("sqrt of negative value")
    out = np.sqrt(a.data)
    safe = np.where(out > 0, out, 1.0)
    return _emit(out, (a,), lambda g: (np.where(out > 0, g / (2.0 * safe), 0.0),))


def sigmoid(a):
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def detach(a):
    """Copy of ``a`` that is never recorded."""
    return Tensor._wrap(np.array(as_tensor(a).data))


# --- reductions and structure ----------------------------------------------


def sum_(a, axis=None):
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit(np.asarray(a.data.sum(axis=axis), dtype=np.float64), (a,), vjp)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


def take(a, index):
    """Basic (non-fancy) indexing, e.g. ``a[t]`` or ``a[:, 0]``."""
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[index] += g
        return (full,)

    return _emit(np.array(a.data[index], dtype=np.float64), (a,), vjp)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _emit(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),))


def gather_rows(a, idx):
    """Pick ``a[i, idx[i]]`` for every row of a 2-D tensor."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2 or idx.shape != (a.shape[0],):
        raise DimensionError(f"gather_rows: {idx.shape} indices for {a.shape}")
    if np.any(idx < 0) or np.any(idx >= a.shape[1]):
        raise ContractError(f"gather_rows: index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[rows, idx] = g
        return (full,)

    return _emit(a.data[rows, idx].copy(), (a,), vjp)


def stack(tensors: Sequence[Tensor]):
    """Stack equally shaped tensors along a new leading axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack of empty sequence")
    for t in tensors[1:]:
        _check_same(tensors[0], t, "stack")
    n = len(tensors)
    return _emit(np.stack([t.data for t in tensors]), tuple(tensors),
                 lambda g: tuple(g[i] for i in range(n)))


# --- probability transforms ------------------------------------------------


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(a):
    """Max-subtracted softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _emit(p, (a,), vjp)


def log_softmax(a):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def vjp(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _emit(out, (a,), vjp)


# --- spike nonlinearity -----------------------------------------------------


@dataclass(frozen=True)
class SurrogateSpec:
    """Backward-only stand-in for the Heaviside derivative.

    All kinds integrate to one and peak at ``1/width``.
    """

    kind: str = "triangle"
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ContractError(f"unknown surrogate kind {self.kind!r}; expected one of {SURROGATE_KINDS}")
        if not self.width > 0:
            raise ContractError(f"surrogate width must be positive, got {self.width}")

    def derivative(self, u):
        """Surrogate dH/du at ``u = v - v_th``."""
        u = np.asarray(u, dtype=np.float64)
        w = self.width
        if self.kind == "triangle":
            return np.maximum(0.0, 1.0 - np.abs(u) / w) / w
        if self.kind == "rectangle":
            return np.where(np.abs(u) < w, 0.5 / w, 0.0)
        s = _stable_sigmoid(4.0 * u / w)
        return 4.0 / w * s * (1.0 - s)


def heaviside_spike(v, v_th, surrogate=SurrogateSpec()):
    """Binary spikes ``1[v >= v_th]`` with a surrogate gradient."""
    v = as_tensor(v)
    u = v.data - v_th
    out = (u >= 0).astype(np.float64)
    return _emit(out, (v,), lambda g: (g * surrogate.derivative(u),))


def sigmoid_spike(v, v_th, slope=4.0):
    """Smooth spike ``sigmoid(slope·(v - v_th))``, exact gradient.

    Used to validate gradients through the unrolled network, where the hard
    threshold would make finite differences meaningless.
    """
    v = as_tensor(v)
    return sigmoid(scale(sub(v, v_th), slope))


# --- reverse pass -----------------------------------------------------------


def backward(tape, loss):
    """Populate ``.grad`` on every tensor recorded on ``tape``.

    Gradients sum over all paths from ``loss``; tensors that do not reach
    ``loss`` receive zeros.
    """
    if loss.tape is not tape:
        raise ContractError("loss is not recorded on this tape")
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: list = [None] * len(tape.tensors)
    grads[loss.node_id] = np.ones(loss.shape)
    for node in reversed(tape.nodes):
        g = grads[node.output.node_id]
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if inp.tape is not tape:
                continue
            k = inp.node_id
            grads[k] = gi if grads[k] is None else grads[k] + gi
    for t, g in zip(tape.tensors, grads):
        t.grad = np.zeros(t.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)

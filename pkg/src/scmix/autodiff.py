"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is a dynamic tape: every op links its output to its inputs and a
closure producing the local input gradients, so the graph is rebuilt on each
forward pass. ``backward`` walks the tape once in reverse topological order
and accumulates gradients into every participating node's ``grad`` buffer.

Graph construction is single-threaded per graph instance; tensors that do not
require gradients (e.g. frozen parameters during rollout) are plain numpy
wrappers and safe to share across concurrent readers.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_node_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (sampling-time fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing the broadcast axes."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A numpy float64 array plus an optional gradient buffer and tape links."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._parents = _parents
        self._backward = _backward

    # ---- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    # ---- backward ------------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(node) into ``grad`` of every node reaching self.

        ``self`` must be scalar. Gradients are propagated through a fresh
        per-call accumulator, then added into each node's persistent ``grad``,
        so repeated calls accumulate.
        """
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar, got shape {self.shape}")

        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if node.node_id in visited or not node.requires_grad:
                continue
            visited.add(node.node_id)
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))

        flowing = {self.node_id: np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(node.node_id, None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, contrib in zip(node._parents, node._backward(g)):
                if contrib is None or not parent.requires_grad:
                    continue
                acc = flowing.get(parent.node_id)
                flowing[parent.node_id] = contrib if acc is None else acc + contrib

    # ---- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise ContractError("tensor/tensor division is not supported; use powc")
        return mul(self, _wrap(1.0 / scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def _scalar_error(t):
    raise ContractError(f"expected scalar tensor, got shape {t.shape}")


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data, parents, backward) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


# ---- elementwise arithmetic ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _result(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def powc(a: Tensor, exponent: float) -> Tensor:
    data = a.data ** exponent
    return _result(data, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _result(data, (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)
    return _result(data, (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return _result(data, (a,), lambda g: (g * (1.0 - data * data),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * (x + 0.044715 * x2 * x)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return _result(data, (a,), backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; at ties the gradient follows the first argument."""
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)
    return _result(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g * take_a, a.shape),
            _unbroadcast(g * ~take_a, b.shape),
        ),
    )


def maximum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data >= b.data
    data = np.where(take_a, a.data, b.data)
    return _result(
        data,
        (a, b),
        lambda g: (
            _unbroadcast(g * take_a, a.shape),
            _unbroadcast(g * ~take_a, b.shape),
        ),
    )


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)
    passthrough = (a.data >= lo) & (a.data <= hi)
    return _result(data, (a,), lambda g: (g * passthrough,))


# ---- shape ops ------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2D+ operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        return (g @ b.data.swapaxes(-1, -2), a.data.swapaxes(-1, -2) @ g)

    return _result(data, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    return _result(data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    data = a.data.transpose(axes)
    inverse = None if axes is None else np.argsort(axes)
    return _result(data, (a,), lambda g: (g.transpose(inverse),))


def take(a: Tensor, index) -> Tensor:
    """Basic/fancy indexing; backward scatter-adds into the source shape."""
    data = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(data, (a,), backward)


def pad_axis(a: Tensor, axis: int, size: int) -> Tensor:
    """Zero-pad ``axis`` up to ``size`` rows (used for shape-stable attention)."""
    current = a.shape[axis]
    if current > size:
        raise ShapeError(f"cannot pad axis {axis} of {a.shape} down to {size}")
    widths = [(0, 0)] * a.ndim
    widths[axis] = (0, size - current)
    data = np.pad(a.data, widths)
    keep = tuple(slice(None) if i != axis else slice(0, current) for i in range(a.ndim))
    return _result(data, (a,), lambda g: (g[keep],))


# ---- reductions ------------------------------------------------------------------


def _expand_reduced(g, shape, axis, keepdims):
    g = np.asarray(g)
    if axis is None:
        return np.full(shape, g.reshape(()))
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    return _result(data, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims),))


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.shape[axis]
    return _result(
        data, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,)
    )


# ---- softmax family --------------------------------------------------------------


def softmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Last-axis softmax of ``logits / temperature`` with max-subtraction."""
    if temperature <= 0:
        raise ContractError(f"softmax temperature must be positive, got {temperature}")
    if not np.isfinite(logits.data).all():
        raise NumericError("softmax received non-finite logits")
    scaled = logits.data / temperature
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    probs = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * probs).sum(axis=-1, keepdims=True)
        return (probs * (g - inner) / temperature,)

    return _result(probs, (logits,), backward)


def log_softmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    if temperature <= 0:
        raise ContractError(f"log_softmax temperature must be positive, got {temperature}")
    if not np.isfinite(logits.data).all():
        raise NumericError("log_softmax received non-finite logits")
    scaled = logits.data / temperature
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - logz

    def backward(g):
        probs = np.exp(out)
        return ((g - probs * g.sum(axis=-1, keepdims=True)) / temperature,)

    return _result(out, (logits,), backward)


# ---- lookup ops ------------------------------------------------------------------


def embedding(weight: Tensor, ids) -> Tensor:
    """Row gather ``weight[ids]``; backward scatter-adds, repeated ids accumulate."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError(
            f"embedding ids out of range [0, {weight.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    data = weight.data[ids]

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result(data, (weight,), backward)


def gather_last(a: Tensor, ids) -> Tensor:
    """Pick ``a[i, ids[i]]`` along the last axis of a 2D tensor."""
    ids = np.asarray(ids, dtype=np.intp)
    if a.ndim != 2 or ids.ndim != 1 or ids.shape[0] != a.shape[0]:
        raise ShapeError(f"gather_last expects [n,v] and [n] ids, got {a.shape}, {ids.shape}")
    rows = np.arange(a.shape[0])
    data = a.data[rows, ids]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, ids), g)
        return (full,)

    return _result(data, (a,), backward)


# ---- composed layers -------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Last-axis layer normalization, built from primitive ops."""
    mu = reduce_mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = reduce_mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = powc(add(var, Tensor(eps)), -0.5)
    return add(mul(mul(centered, inv), gain), bias)

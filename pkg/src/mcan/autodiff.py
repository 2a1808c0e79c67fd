"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`DiffValue` wraps a numpy array together with a gradient slot and a
recorded backward rule.  Building expressions out of the ops below produces an
acyclic computation graph; calling :meth:`DiffValue.backward` on a scalar
result fills ``grad`` on every node that requires it.  Everything is double
precision so analytic gradients can be verified against central finite
differences at tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeMismatch

Array = np.ndarray


class DiffValue:
    """One node of the computation graph: value, gradient, backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_needs", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._needs = requires_grad
        self._parents: tuple[DiffValue, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse pass from a scalar-shaped node; accumulates into leaf grads."""
        if self.data.size != 1:
            raise ShapeMismatch(f"backward requires a scalar loss, got shape {self.data.shape}")
        # Iterative topological order; graphs here can be deeper than the
        # Python recursion limit (long LSTM chains).
        topo: list[DiffValue] = []
        visited: set[int] = set()
        stack: list[tuple[DiffValue, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; non-DiffValue operands are lifted to constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return add(negate(self), other)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(self, other)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def __repr__(self):
        return f"DiffValue(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> DiffValue:
    return DiffValue(data, requires_grad=False)


def parameter(data) -> DiffValue:
    return DiffValue(data, requires_grad=True)


def _lift(x) -> DiffValue:
    return x if isinstance(x, DiffValue) else constant(x)


def _accumulate(node: DiffValue, g: Array) -> None:
    if not node._needs:
        return
    if g.shape != node.data.shape:
        raise ShapeMismatch(f"gradient shape {g.shape} != value shape {node.data.shape}")
    if node.grad is None:
        node.grad = g.copy()
    else:
        node.grad += g


def _node(data: Array, parents: tuple[DiffValue, ...], backward) -> DiffValue:
    out = DiffValue(data)
    if any(p._needs for p in parents):
        out._needs = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> DiffValue:
    a, b = _lift(a), _lift(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def subtract(a, b) -> DiffValue:
    a, b = _lift(a), _lift(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeMismatch(f"subtract: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), backward)


def negate(a) -> DiffValue:
    a = _lift(a)

    def backward(g):
        _accumulate(a, -g)

    return _node(-a.data, (a,), backward)


def multiply(a, b) -> DiffValue:
    a, b = _lift(a), _lift(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"multiply: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def matmul(a, b) -> DiffValue:
    """Matrix product for 1-D/2-D operands (inner dimensions must agree)."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul: operands must be 1-D or 2-D, got {a.shape} @ {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.shape} @ {b.shape}") from None

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 2 and bd.ndim == 2:
            _accumulate(a, g @ bd.T)
            _accumulate(b, ad.T @ g)
        elif ad.ndim == 2 and bd.ndim == 1:
            _accumulate(a, np.outer(g, bd))
            _accumulate(b, ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            _accumulate(a, bd @ g)
            _accumulate(b, np.outer(ad, g))
        else:
            _accumulate(a, g * bd)
            _accumulate(b, g * ad)

    return _node(data, (a, b), backward)


def concat(values, axis: int = 0) -> DiffValue:
    vals = [_lift(v) for v in values]
    if not vals:
        raise ShapeMismatch("concat: empty input list")
    try:
        data = np.concatenate([v.data for v in vals], axis=axis)
    except ValueError:
        raise ShapeMismatch(
            f"concat: incompatible shapes {[v.shape for v in vals]} along axis {axis}"
        ) from None
    sizes = [v.data.shape[axis] for v in vals]

    def backward(g):
        offset = 0
        for v, size in zip(vals, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            _accumulate(v, np.ascontiguousarray(g[tuple(index)]))
            offset += size

    return _node(data, tuple(vals), backward)


def take(a, key) -> DiffValue:
    """Indexing/slicing with gradient scatter-add on the way back."""
    a = _lift(a)
    data = a.data[key]

    def backward(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, key, g)
        _accumulate(a, buf)

    return _node(np.array(data), (a,), backward)


def transpose(a) -> DiffValue:
    a = _lift(a)
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose: expected a 2-D value, got {a.shape}")

    def backward(g):
        _accumulate(a, g.T)

    return _node(a.data.T.copy(), (a,), backward)


def reshape(a, shape) -> DiffValue:
    a = _lift(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {a.shape} as {shape}") from None

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _node(data, (a,), backward)


def sigmoid(a) -> DiffValue:
    a = _lift(a)
    with np.errstate(over="ignore"):
        data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accumulate(a, g * data * (1.0 - data))

    return _node(data, (a,), backward)


def tanh(a) -> DiffValue:
    a = _lift(a)
    data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - data * data))

    return _node(data, (a,), backward)


def square(a) -> DiffValue:
    a = _lift(a)

    def backward(g):
        _accumulate(a, g * 2.0 * a.data)

    return _node(a.data * a.data, (a,), backward)


def vsum(a, axis=None, keepdims: bool = False) -> DiffValue:
    a = _lift(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            expanded = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(expanded, a.data.shape).copy())

    return _node(np.asarray(data), (a,), backward)


def vmean(a, axis=None, keepdims: bool = False) -> DiffValue:
    a = _lift(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return multiply(vsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(a, axis: int = -1) -> DiffValue:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, (g - inner) * data)

    return _node(data, (a,), backward)


def interleave_columns(raw, fill, raw_cols: Array, fill_cols: Array, width: int) -> DiffValue:
    """Assemble ``(B, width)`` from raw columns and fill columns.

    ``raw`` is ``(B, L)``; ``fill`` is ``(len(fill_cols),)`` (shared across the
    batch) or ``(B, len(fill_cols))`` or None when there is nothing to fill.
    """
    raw = _lift(raw)
    if raw.data.ndim != 2:
        raise ShapeMismatch(f"interleave_columns: raw must be 2-D, got {raw.shape}")
    batch = raw.data.shape[0]
    data = np.empty((batch, width), dtype=np.float64)
    data[:, raw_cols] = raw.data
    parents: tuple[DiffValue, ...]
    if fill is None:
        if len(fill_cols):
            raise ShapeMismatch("interleave_columns: fill columns present but no fill values")
        parents = (raw,)
    else:
        fill = _lift(fill)
        data[:, fill_cols] = fill.data
        parents = (raw, fill)

    def backward(g):
        _accumulate(raw, np.ascontiguousarray(g[:, raw_cols]))
        if fill is not None:
            gf = g[:, fill_cols]
            if fill.data.ndim == 1:
                gf = gf.sum(axis=0)
            _accumulate(fill, np.ascontiguousarray(gf))

    return _node(data, parents, backward)


def dropout(x: DiffValue, rate: float, training: bool, rng: np.random.Generator | None = None) -> DiffValue:
    """Inverted dropout: scale survivors by 1/(1-rate) so evaluation is identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng")
    keep = rng.random(x.data.shape) >= rate
    mask = keep.astype(np.float64) / (1.0 - rate)
    return multiply(x, mask)


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class AdamState:
    """Adam optimizer state for a fixed parameter list."""

    learning_rate: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[Array] = field(default_factory=list)
    v: list[Array] = field(default_factory=list)

    def initialize(self, params: list[DiffValue]) -> None:
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step = 0


def adam_step(params: list[DiffValue], grads, state: AdamState) -> None:
    """Standard Adam update with bias correction, in place on ``params``."""
    if not state.m:
        state.initialize(params)
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if len(grads) != len(params):
        raise ShapeMismatch(f"adam_step: {len(params)} params but {len(grads)} grads")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
    """Xavier/Glorot uniform initialization for a weight matrix."""
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)

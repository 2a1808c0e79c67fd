"""Differentiable building blocks: Chebyshev features, LSTM, FNN, attention fusion.

All forward functions accept either a single vector or a ``(batch, dim)``
matrix; the batched form is what the trainer uses.  Parameters are plain
dataclasses holding :class:`~mcan.autodiff.DiffValue` leaves so one
``named_parameters`` walk can feed both the optimizer and the checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue
from .errors import ConfigError, ShapeMismatch


@dataclass
class Dropout:
    """Active-dropout context threaded through forward passes during training."""

    rate: float
    rng: np.random.Generator

    def apply(self, x: DiffValue) -> DiffValue:
        return ad.dropout(x, self.rate, training=True, rng=self.rng)


def _maybe_drop(x: DiffValue, drop: Dropout | None) -> DiffValue:
    return drop.apply(x) if drop is not None and drop.rate > 0.0 else x


# ---------------------------------------------------------------------------
# Chebyshev polynomial features (first kind, orders 1..K, no constant term)


def chebyshev_basis(x, order: int) -> np.ndarray:
    """Values T_1(x)..T_order(x); inputs are clamped to [-1, 1].

    For array input the result has the order axis first: shape
    ``(order,) + x.shape``.
    """
    if order < 1:
        raise ConfigError(f"chebyshev order must be >= 1, got {order}")
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    out = np.empty((order,) + x.shape, dtype=np.float64)
    out[0] = x
    if order >= 2:
        out[1] = 2.0 * x * x - 1.0
    for l in range(2, order):
        out[l] = 2.0 * x * out[l - 1] - out[l - 2]
    return out


def chebyshev_features(x: DiffValue, order: int) -> list[DiffValue]:
    """Differentiable T_1(x)..T_order(x) via the recurrence; x must lie in [-1, 1]."""
    if order < 1:
        raise ConfigError(f"chebyshev order must be >= 1, got {order}")
    feats = [x]
    if order >= 2:
        feats.append(ad.subtract(ad.multiply(ad.square(x), 2.0), 1.0))
    for _ in range(2, order):
        feats.append(ad.subtract(ad.multiply(ad.multiply(x, feats[-1]), 2.0), feats[-2]))
    return feats


@dataclass
class CpaParams:
    """Learnable coefficients of a truncated Chebyshev approximation."""

    coefficients: DiffValue  # (order,)

    @property
    def order(self) -> int:
        return self.coefficients.data.shape[0]


def cpa_eval(params: CpaParams, x) -> DiffValue:
    """Sum of v_l * T_l(x); linear in the coefficients, differentiable in both.

    ``x`` may be a float, a numpy array (treated as constant) or a DiffValue
    already mapped into [-1, 1].
    """
    if isinstance(x, DiffValue):
        feats = chebyshev_features(x, params.order)
        out = ad.multiply(feats[0], params.coefficients[0])
        for l in range(1, params.order):
            out = ad.add(out, ad.multiply(feats[l], params.coefficients[l]))
        return out
    basis = chebyshev_basis(x, params.order)  # (order,) + x.shape
    flat = basis.reshape(params.order, -1).T  # (n, order)
    values = ad.matmul(ad.constant(flat), params.coefficients)  # (n,)
    if np.isscalar(x) or np.asarray(x).ndim == 0:
        return ad.reshape(values, ())
    return ad.reshape(values, np.asarray(x).shape)


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmParams:
    """Weights of one LSTM cell (one matrix per gate, as in the cell equations)."""

    w_ix: DiffValue
    w_ih: DiffValue
    w_fx: DiffValue
    w_fh: DiffValue
    w_ox: DiffValue
    w_oh: DiffValue
    w_cx: DiffValue
    w_ch: DiffValue
    b_i: DiffValue
    b_f: DiffValue
    b_o: DiffValue
    b_c: DiffValue

    @property
    def hidden_size(self) -> int:
        return self.w_ih.data.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_ix.data.shape[0]


@dataclass
class LstmStack:
    """Stacked LSTM layers; layer k feeds its hidden sequence to layer k+1."""

    cells: list[LstmParams]

    @property
    def hidden_size(self) -> int:
        return self.cells[-1].hidden_size


def init_lstm(rng: np.random.Generator, input_size: int, hidden_size: int) -> LstmParams:
    def w(n_in):
        return ad.parameter(ad.xavier_uniform(rng, (n_in, hidden_size)))

    def b():
        return ad.parameter(np.zeros(hidden_size))

    return LstmParams(
        w_ix=w(input_size), w_ih=w(hidden_size),
        w_fx=w(input_size), w_fh=w(hidden_size),
        w_ox=w(input_size), w_oh=w(hidden_size),
        w_cx=w(input_size), w_ch=w(hidden_size),
        b_i=b(), b_f=b(), b_o=b(), b_c=b(),
    )


def init_lstm_stack(rng, input_size: int, hidden_size: int, layers: int) -> LstmStack:
    cells = [init_lstm(rng, input_size if k == 0 else hidden_size, hidden_size) for k in range(layers)]
    return LstmStack(cells)


def lstm_step(params: LstmParams, x, h_prev, c_prev) -> tuple[DiffValue, DiffValue]:
    """One LSTM cell update: three sigmoid gates, tanh candidate, new state."""
    x = x if isinstance(x, DiffValue) else ad.constant(x)
    vector_in = x.data.ndim == 1
    if vector_in:
        x = ad.reshape(x, (1, x.data.shape[0]))
        h_prev = ad.reshape(h_prev, (1, -1)) if isinstance(h_prev, DiffValue) else ad.constant(np.reshape(h_prev, (1, -1)))
        c_prev = ad.reshape(c_prev, (1, -1)) if isinstance(c_prev, DiffValue) else ad.constant(np.reshape(c_prev, (1, -1)))
    else:
        h_prev = h_prev if isinstance(h_prev, DiffValue) else ad.constant(h_prev)
        c_prev = c_prev if isinstance(c_prev, DiffValue) else ad.constant(c_prev)
    if x.data.shape[1] != params.input_size:
        raise ShapeMismatch(
            f"lstm_step: input width {x.data.shape[1]} != expected {params.input_size}"
        )
    gate_i = ad.sigmoid(ad.matmul(x, params.w_ix) + ad.matmul(h_prev, params.w_ih) + params.b_i)
    gate_f = ad.sigmoid(ad.matmul(x, params.w_fx) + ad.matmul(h_prev, params.w_fh) + params.b_f)
    gate_o = ad.sigmoid(ad.matmul(x, params.w_ox) + ad.matmul(h_prev, params.w_oh) + params.b_o)
    candidate = ad.tanh(ad.matmul(x, params.w_cx) + ad.matmul(h_prev, params.w_ch) + params.b_c)
    c_new = gate_i * candidate + gate_f * c_prev
    h_new = gate_o * ad.tanh(c_new)
    if vector_in:
        return ad.reshape(h_new, (-1,)), ad.reshape(c_new, (-1,))
    return h_new, c_new


def lstm_sequence(stack: LstmStack | LstmParams, inputs, drop: Dropout | None = None) -> DiffValue:
    """Run a (stacked) LSTM over a sequence of inputs; returns the final hidden state.

    ``inputs`` is a list of per-step vectors or ``(batch, dim)`` values; the
    initial hidden and cell states are zero.  Dropout, when active, is applied
    to the hidden sequence between layers.
    """
    if isinstance(stack, LstmParams):
        stack = LstmStack([stack])
    if len(inputs) == 0:
        raise ShapeMismatch("lstm_sequence: empty input sequence")
    steps = [x if isinstance(x, DiffValue) else ad.constant(x) for x in inputs]
    batched = steps[0].data.ndim == 2
    batch = steps[0].data.shape[0] if batched else 1
    h_final = None
    for depth, cell in enumerate(stack.cells):
        hidden = cell.hidden_size
        shape = (batch, hidden) if batched else (hidden,)
        h = ad.constant(np.zeros(shape))
        c = ad.constant(np.zeros(shape))
        outputs = []
        for x in steps:
            h, c = lstm_step(cell, x, h, c)
            outputs.append(h)
        if depth < len(stack.cells) - 1 and drop is not None:
            outputs = [_maybe_drop(o, drop) for o in outputs]
        steps = outputs
        h_final = h
    return h_final


# ---------------------------------------------------------------------------
# Fully connected network


@dataclass
class FnnLayer:
    weight: DiffValue  # (in, out)
    bias: DiffValue  # (out,)
    activation: str  # "sigmoid" or "identity"


@dataclass
class FnnParams:
    layers: list[FnnLayer]

    @property
    def input_size(self) -> int:
        return self.layers[0].weight.data.shape[0]

    @property
    def output_size(self) -> int:
        return self.layers[-1].weight.data.shape[1]


def init_fnn(rng, input_size: int, hidden_sizes: list[int], output_size: int) -> FnnParams:
    """Sigmoid hidden layers followed by an identity output layer."""
    sizes = [input_size] + list(hidden_sizes) + [output_size]
    layers = []
    for k in range(len(sizes) - 1):
        act = "identity" if k == len(sizes) - 2 else "sigmoid"
        layers.append(FnnLayer(
            weight=ad.parameter(ad.xavier_uniform(rng, (sizes[k], sizes[k + 1]))),
            bias=ad.parameter(np.zeros(sizes[k + 1])),
            activation=act,
        ))
    return FnnParams(layers)


def fnn_forward(params: FnnParams, x, drop: Dropout | None = None) -> DiffValue:
    """Chained affine layers; sigmoid hidden activations, identity output."""
    x = x if isinstance(x, DiffValue) else ad.constant(x)
    width = x.data.shape[-1]
    if width != params.input_size:
        raise ShapeMismatch(f"fnn_forward: input width {width} != expected {params.input_size}")
    out = x
    for k, layer in enumerate(params.layers):
        out = ad.matmul(out, layer.weight) + layer.bias
        if layer.activation == "sigmoid":
            out = ad.sigmoid(out)
            out = _maybe_drop(out, drop)
        elif layer.activation != "identity":
            raise ConfigError(f"unknown activation {layer.activation!r}")
    return out


# ---------------------------------------------------------------------------
# Attention fusion


@dataclass
class AttentionParams:
    """Shared projection plus a learned query scoring each component."""

    projection: DiffValue  # (in, out)
    query: DiffValue  # (out,)

    @property
    def output_size(self) -> int:
        return self.projection.data.shape[1]


def init_attention(rng, input_size: int, output_size: int) -> AttentionParams:
    return AttentionParams(
        projection=ad.parameter(ad.xavier_uniform(rng, (input_size, output_size))),
        query=ad.parameter(ad.xavier_uniform(rng, (output_size,))),
    )


def _attention_parts(params: AttentionParams, components):
    if len(components) == 0:
        raise ShapeMismatch("attention_fuse: no components to fuse")
    comps = [c if isinstance(c, DiffValue) else ad.constant(c) for c in components]
    batched = comps[0].data.ndim == 2
    projected = []
    scores = []
    for c in comps:
        p = ad.matmul(c, params.projection)
        projected.append(p)
        s = ad.matmul(p, params.query)  # (batch,) or scalar
        scores.append(ad.reshape(s, (-1, 1)) if batched else ad.reshape(s, (1,)))
    stacked = ad.concat(scores, axis=1 if batched else 0)  # (batch, k) or (k,)
    weights = ad.softmax(stacked, axis=-1)
    return projected, weights, batched


def attention_weights(params: AttentionParams, components) -> np.ndarray:
    """Softmax weights the fusion assigns to each component (for inspection)."""
    _, weights, _ = _attention_parts(params, components)
    return weights.data


def attention_fuse(params: AttentionParams, components) -> DiffValue:
    """Dot-product attention over projected components: weighted sum by softmax scores."""
    projected, weights, batched = _attention_parts(params, components)
    out = None
    for k, p in enumerate(projected):
        w = weights[:, k : k + 1] if batched else weights[k]
        term = ad.multiply(p, w)
        out = term if out is None else ad.add(out, term)
    return out

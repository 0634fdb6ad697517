"""Coordinate-network machinery: Fourier-feature encoding, a real-valued MLP
with hand-written reverse-mode gradients, and Adam.

Networks emit ``2N`` reals per input row which are read as ``N`` complex
values ``(re_0, im_0, re_1, im_1, ...)``.  Weight matrices are stored with
shape ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

OUT_OF_RANGE_MARGIN = 0.10


class OutOfRangeWarning(RuntimeWarning):
    """Encoder input lay more than 10% outside its normalization box."""


@dataclass(frozen=True)
class FourierFeatureMap:
    """Normalize coordinates to [-1, 1] and append sin/cos features.

    ``lower``/``upper`` give the per-coordinate box that maps to [-1, 1].
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    num_frequencies: int = 6
    scale: float = 1.0

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds differ in length")
        if self.num_frequencies < 0:
            raise ValueError("num_frequencies must be >= 0")

    @property
    def input_dim(self) -> int:
        return len(self.lower)

    @property
    def output_dim(self) -> int:
        return self.input_dim * (2 * self.num_frequencies + 1)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return encode(x, self)


def encode(x, fmap: FourierFeatureMap, columns=None) -> np.ndarray:
    """Encode rows of raw coordinates.

    Each coordinate ``i`` contributes a contiguous block
    ``[z_i, sin(f_k z_i) for k < K, cos(f_k z_i) for k < K]`` with
    ``f_k = scale * 2^k * pi`` and ``z_i`` the coordinate normalized to
    [-1, 1].  ``columns`` selects a subset of coordinates (``x`` then holds
    only those); the full encoding is the concatenation over all columns.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    columns = list(range(fmap.input_dim)) if columns is None else list(columns)
    if x.shape[1] != len(columns):
        raise ValueError(f"expected {len(columns)} input coordinates, got {x.shape[1]}")
    lo = np.asarray(fmap.lower, dtype=np.float64)[columns]
    hi = np.asarray(fmap.upper, dtype=np.float64)[columns]
    half = np.where(hi > lo, (hi - lo) / 2, 1.0)
    z = (x - (hi + lo) / 2) / half
    if np.any(np.abs(z) > 1.0 + OUT_OF_RANGE_MARGIN):
        warnings.warn("encoder input outside normalization box by more than 10%",
                      OutOfRangeWarning, stacklevel=2)
    k = fmap.num_frequencies
    if k == 0:
        return z
    freqs = fmap.scale * np.pi * 2.0 ** np.arange(k)
    arg = z[:, :, None] * freqs[None, None, :]
    return np.concatenate([z[:, :, None], np.sin(arg), np.cos(arg)], axis=2).reshape(len(z), -1)


@dataclass(frozen=True)
class FactoredInput:
    """Network input whose rows split into per-point and per-group features.

    Row ``r`` of the logical input is ``[point_features[r], group_features[g(r)]]``
    where rows come in contiguous groups of ``group_sizes``.  When
    ``shared_points`` is set, ``point_features`` holds one block that is
    repeated for every group.  The first layer then costs one small matmul
    per group instead of one per row.
    """

    point_features: np.ndarray
    group_features: np.ndarray
    group_sizes: tuple[int, ...]
    shared_points: bool = False

    @property
    def n_rows(self) -> int:
        return int(sum(self.group_sizes))

    @property
    def width(self) -> int:
        return self.point_features.shape[1] + self.group_features.shape[1]

    def astype(self, dtype) -> "FactoredInput":
        return FactoredInput(self.point_features.astype(dtype, copy=False),
                             self.group_features.astype(dtype, copy=False), self.group_sizes, self.shared_points)

    def dense(self) -> np.ndarray:
        pf = np.tile(self.point_features, (len(self.group_sizes), 1)) if self.shared_points else self.point_features
        gf = np.repeat(self.group_features, self.group_sizes, axis=0)
        return np.concatenate([pf, gf], axis=1)


def _relu_grad(a, h, g):
    g *= a > 0
    return g


# name -> (activation(a), backprop(a, h, g) -> g * activation'(a)); backprop may overwrite g
_ACTIVATIONS = {
    "relu": (lambda a: np.maximum(a, 0.0), _relu_grad),
    "tanh": (np.tanh, lambda a, h, g: g * (1.0 - h * h)),
    "softplus": (lambda a: np.logaddexp(0.0, a), lambda a, h, g: g * (0.5 * (1.0 + np.tanh(0.5 * a)))),
}


@dataclass
class MLPParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weights {w.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: fan-in {w.shape[0]} != previous fan-out {self.weights[i - 1].shape[1]}")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_outputs_complex(self) -> int:
        return self.widths[-1] // 2

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in storage order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "MLPParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.num_parameters:
            raise ValueError(f"expected {self.num_parameters} parameters, got {vec.size}")
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            bs.append(vec[pos:pos + b.size].copy())
            pos += b.size
        return MLPParams(ws, bs, self.activation)

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)


def init_mlp(widths: list[int], seed: int, activation: str = "relu", zero: bool = False) -> MLPParams:
    """He-uniform initialisation (Glorot for the linear output layer)."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        limit = np.sqrt((6.0 if not last else 6.0 * fan_in / (fan_in + fan_out)) / fan_in)
        if activation == "tanh" and not last:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(np.zeros((fan_in, fan_out)) if zero else rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MLPParams(ws, bs, activation)


def _first_layer(x: FactoredInput, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    dp = x.point_features.shape[1]
    point_part = x.point_features @ w[:dp]
    group_part = x.group_features @ w[dp:] + b
    if x.shared_points:
        m = len(point_part)
        return (point_part[None, :, :] + group_part[:, None, :]).reshape(len(x.group_sizes) * m, -1)
    return point_part + np.repeat(group_part, x.group_sizes, axis=0)


def _first_layer_weight_grad(x: FactoredInput, g: np.ndarray) -> np.ndarray:
    dp = x.point_features.shape[1]
    starts = np.concatenate([[0], np.cumsum(x.group_sizes)[:-1]]).astype(int)
    group_sums = np.add.reduceat(g, starts, axis=0) if len(g) else np.zeros((0, g.shape[1]))
    if x.shared_points:
        m = x.point_features.shape[0]
        point_grad = x.point_features.T @ g.reshape(len(x.group_sizes), m, -1).sum(axis=0)
    else:
        point_grad = x.point_features.T @ g
    return np.concatenate([point_grad, x.group_features.T @ group_sums], axis=0)


@dataclass
class GradientTape:
    """Layer inputs and pre-activations recorded by :func:`forward`."""

    params: MLPParams
    inputs: list = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    dtype: np.dtype = np.dtype(np.float64)


def forward(params: MLPParams, x, dtype=np.float64):
    """Evaluate the network on rows of ``x``; returns ``(complex_out, tape)``.

    ``dtype`` selects the compute precision (parameters stay float64); the
    complex output is always complex128.
    """
    act, _ = _ACTIVATIONS[params.activation]
    if isinstance(x, FactoredInput):
        h = x.astype(dtype)
        width = h.width
    else:
        h = np.atleast_2d(np.asarray(x)).astype(dtype, copy=False)
        width = h.shape[1]
    if width != params.widths[0]:
        raise ValueError(f"network expects {params.widths[0]} inputs, got {width}")
    tape = GradientTape(params, dtype=np.dtype(dtype))
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        w, b = w.astype(dtype, copy=False), b.astype(dtype, copy=False)
        tape.inputs.append(h)
        a = _first_layer(h, w, b) if isinstance(h, FactoredInput) else h @ w + b
        if i < n_layers - 1:
            tape.preacts.append(a)
            h = act(a)
        else:
            h = a
    if not np.all(np.isfinite(h)):
        bad = next((i for i, a in enumerate(tape.preacts) if not np.all(np.isfinite(a))), n_layers - 1)
        raise NumericalError(f"non-finite activations at layer {bad}")
    h = h.astype(np.float64, copy=False)
    return h[:, 0::2] + 1j * h[:, 1::2], tape


def backward(tape: GradientTape, grad_out) -> list[np.ndarray]:
    """Reverse pass.

    ``grad_out`` is either the complex array ``dL/dRe + 1j dL/dIm`` matching
    the complex output, or the real ``(n, 2N)`` gradient of the raw outputs.
    Returns gradients in :meth:`MLPParams.arrays` order.
    """
    params = tape.params
    if len(tape.inputs) != len(params.weights):
        raise ValueError("tape does not match the parameter set")
    g = np.asarray(grad_out)
    if np.iscomplexobj(g):
        real = np.empty((g.shape[0], 2 * g.shape[1]), dtype=tape.dtype)
        real[:, 0::2] = g.real
        real[:, 1::2] = g.imag
        g = real
    else:
        g = g.astype(tape.dtype, copy=False)
    x0 = tape.inputs[0]
    n_rows = x0.n_rows if isinstance(x0, FactoredInput) else x0.shape[0]
    if g.shape != (n_rows, params.widths[-1]):
        raise ValueError(f"output gradient shape {g.shape} does not match the forward pass")
    _, dact = _ACTIVATIONS[params.activation]
    grads: list[np.ndarray] = [None] * (2 * len(params.weights))
    for i in range(len(params.weights) - 1, -1, -1):
        x = tape.inputs[i]
        grads[2 * i] = _first_layer_weight_grad(x, g) if isinstance(x, FactoredInput) else x.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i:
            g = g @ params.weights[i].T.astype(tape.dtype, copy=False)
            g = dact(tape.preacts[i - 1], tape.inputs[i], g)
    return [gr.astype(np.float64, copy=False) for gr in grads]


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None


def adam_step(params: MLPParams, grads: list[np.ndarray], state: AdamState, lr: float | None = None) -> MLPParams:
    """One bias-corrected Adam update (minimization); mutates ``state``."""
    arrays = params.arrays()
    if len(grads) != len(arrays) or any(g.shape != a.shape for g, a in zip(grads, arrays)):
        raise ValueError("gradient shapes do not match parameters")
    if state.m is None:
        state.m = [np.zeros_like(a) for a in arrays]
        state.v = [np.zeros_like(a) for a in arrays]
    state.step += 1
    lr = state.lr if lr is None else lr
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    new = []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        new.append(a - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return MLPParams(new[0::2], new[1::2], params.activation)


def finite_difference_gradient(loss, params: MLPParams, step: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of ``loss(params)`` over flattened parameters."""
    base = params.flat()
    idx = range(base.size) if indices is None else indices
    out = np.zeros(base.size)
    for i in idx:
        plus = base.copy()
        plus[i] += step
        minus = base.copy()
        minus[i] -= step
        out[i] = (loss(params.with_flat(plus)) - loss(params.with_flat(minus))) / (2 * step)
    return out

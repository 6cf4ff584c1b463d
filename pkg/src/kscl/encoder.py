"""Small ReLU MLP embedding network with hand-written backprop.

The last layer is linear and its output is L2-normalized, so every embedding
lies on the unit sphere. The key encoder is an exponential moving average of
the query encoder and never sees a gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteActivation, NonFiniteGradient, ShapeMismatch

NORM_GUARD = 1e-12

Layer = tuple[np.ndarray, np.ndarray]


@dataclass
class MlpParams:
    """Layers as (weight of shape (out, in), bias of shape (out,)); ReLU between layers."""

    layers: list[Layer]

    def __post_init__(self):
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} and bias {b.shape} do not conform")
            if i and w.shape[1] != self.layers[i - 1][0].shape[0]:
                raise ShapeMismatch(f"layer {i} input {w.shape[1]} != previous output {self.layers[i - 1][0].shape[0]}")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w, _ in self.layers]

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])


def init_mlp(dims: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), for weights and biases."""
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((w, b))
    return MlpParams(layers)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    embedding: np.ndarray
    norms: np.ndarray
    squeeze: bool = False


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Embed a single input (F,) or a batch (B, F); returns unit-norm embeddings and a cache."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.input_dim:
        raise DimensionMismatch(f"input of shape {x.shape} for a network expecting {params.input_dim} features")
    inputs, preacts = [], []
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        inputs.append(h)
        z = h @ w.T + b
        preacts.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    norms = np.linalg.norm(h, axis=1)
    norms = np.where(norms < NORM_GUARD, norms + NORM_GUARD, norms)
    v = h / norms[:, None]
    if not np.all(np.isfinite(v)):
        raise NonFiniteActivation("embedding contains NaN or Inf")
    cache = ForwardCache(inputs, preacts, v, norms, squeeze)
    return (v[0] if squeeze else v), cache


def normalization_backward(v: np.ndarray, norms: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Pull a gradient on v = f / ||f|| back onto f: (I - v v^T) g / ||f||."""
    radial = np.sum(v * grad, axis=-1, keepdims=True)
    return (grad - radial * v) / norms[..., None]


def backward(params: MlpParams, cache: ForwardCache, grad_wrt_embedding: np.ndarray) -> list[Layer]:
    g = np.asarray(grad_wrt_embedding, dtype=np.float64)
    if cache.squeeze:
        g = g[None]
    if g.shape != cache.embedding.shape or len(cache.inputs) != len(params.layers):
        raise ShapeMismatch(f"upstream gradient {g.shape} does not match cached embedding {cache.embedding.shape}")
    delta = normalization_backward(cache.embedding, cache.norms, g)
    grads: list[Layer] = []
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        grads.append((delta.T @ cache.inputs[i], delta.sum(axis=0)))
        if i:
            delta = (delta @ w) * (cache.preacts[i - 1] > 0.0)
    grads.reverse()
    return grads


@dataclass
class EncoderPair:
    query: MlpParams
    key: MlpParams
    momentum: float = 0.999

    @classmethod
    def from_query(cls, query: MlpParams, momentum: float = 0.999) -> "EncoderPair":
        return cls(query, query.copy(), momentum)


def _check_same_shapes(a: MlpParams, b: MlpParams) -> None:
    if a.shapes != b.shapes:
        raise ShapeMismatch(f"parameter shapes differ: {a.shapes} vs {b.shapes}")


def momentum_update(pair: EncoderPair) -> MlpParams:
    """key <- m * key + (1 - m) * query, written as an increment so equal encoders stay bit-equal."""
    _check_same_shapes(pair.query, pair.key)
    m = pair.momentum
    if m == 0.0:
        pair.key = pair.query.copy()
        return pair.key
    step = 1.0 - m
    pair.key = MlpParams(
        [(wk + step * (wq - wk), bk + step * (bq - bk)) for (wq, bq), (wk, bk) in zip(pair.query.layers, pair.key.layers)]
    )
    return pair.key


@dataclass
class SgdState:
    """Momentum buffers, one (weight, bias) pair per layer; empty until the first step."""

    buffers: list[Layer] = field(default_factory=list)


def sgd_step(
    params: MlpParams,
    grads: Sequence[Layer],
    lr: float,
    weight_decay: float = 0.0,
    momentum: float = 0.0,
    state: SgdState | None = None,
) -> tuple[MlpParams, SgdState]:
    """SGD with heavy-ball momentum; weight decay is added to the gradient.

    buf <- momentum * buf + (g + wd * p), p <- p - lr * buf; the first step
    initializes buf to the decayed gradient.
    """
    if len(grads) != len(params.layers):
        raise ShapeMismatch("gradient list length does not match parameters")
    state = state or SgdState()
    new_layers, new_bufs = [], []
    for i, ((w, b), (gw, gb)) in enumerate(zip(params.layers, grads)):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ShapeMismatch(f"layer {i}: gradient shapes {gw.shape}, {gb.shape} vs {w.shape}, {b.shape}")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NonFiniteGradient(f"layer {i} gradient contains NaN or Inf")
        dw = gw + weight_decay * w
        db = gb + weight_decay * b
        if momentum and state.buffers:
            bw, bb = state.buffers[i]
            dw = momentum * bw + dw
            db = momentum * bb + db
        new_bufs.append((dw, db))
        new_layers.append((w - lr * dw, b - lr * db))
    return MlpParams(new_layers), SgdState(new_bufs if momentum else [])

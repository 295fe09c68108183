"""Turn a ModelSpec into a runnable network: init, forward, backward.

ModelParams maps layer index -> parameter-bearing layer object (ConvLayer,
FcLayer or BatchNormLayer). Gradients use flat (layer index, field name)
keys so the optimizer can walk them in a fixed order.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from .modelspec import ModelSpec, shape_trace
from .tensor import DEFAULT_DTYPE, SeededRng

ModelParams = dict[int, L.ConvLayer | L.FcLayer | L.BatchNormLayer]
GradKey = tuple[int, str]

BN_MOMENTUM = 0.01
BN_EPSILON = 1e-5


def init_params(spec: ModelSpec, rng: SeededRng, dtype=DEFAULT_DTYPE) -> ModelParams:
    """He fan-in normal weights, zero biases, identity batchnorm."""
    trace = shape_trace(spec)
    shapes = [spec.input_shape] + trace
    params: ModelParams = {}
    for i, layer in enumerate(spec.layers):
        shape_in = shapes[i]
        if layer.kind == "conv":
            k, cin, cout = layer.kernel, shape_in[2], layer.filters
            std = np.sqrt(2.0 / (k * k * cin))
            params[i] = L.ConvLayer(
                weights=rng.normal((k, k, cin, cout), std, dtype),
                bias=np.zeros(cout, dtype=dtype),
                stride=layer.stride,
                pad=layer.pad,
            )
        elif layer.kind == "fc":
            din, dout = shape_in[0], layer.neurons
            std = np.sqrt(2.0 / din)
            params[i] = L.FcLayer(
                weights=rng.normal((din, dout), std, dtype),
                bias=np.zeros(dout, dtype=dtype),
            )
        elif layer.kind == "batchnorm":
            params[i] = L.BatchNormLayer.create(
                shape_in[-1], dtype=dtype,
                momentum=BN_MOMENTUM, epsilon=BN_EPSILON)
    return params


def forward_cached(spec: ModelSpec, params: ModelParams, x: np.ndarray,
                   mode: str = "eval", rng: SeededRng | None = None):
    """Run all layers in order; returns (logits, per-layer caches).

    Train mode draws dropout masks from `rng` and updates batch-norm running
    statistics; eval mode is a pure function of (params, x).
    """
    caches: list = []
    out = x
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            caches.append(out)
            out = L.conv2d_forward(out, params[i])
        elif layer.kind == "maxpool":
            out, cache = L.maxpool_forward(out)
            caches.append(cache)
        elif layer.kind == "flatten":
            caches.append(out.shape)
            out = out.reshape(out.shape[0], -1)
        elif layer.kind == "fc":
            caches.append(out)
            out = L.fc_forward(out, params[i])
        elif layer.kind == "relu":
            caches.append(out)
            out = L.relu_forward(out)
        elif layer.kind == "batchnorm":
            caches.append(out)
            out = L.batchnorm_forward(out, params[i], mode)
        elif layer.kind == "dropout":
            out, mask = L.dropout_forward(out, layer.rate, rng, mode)
            caches.append(mask)
        else:
            raise ValueError(f"layer {i}: unknown kind {layer.kind!r}")
    return out, caches


def forward(spec: ModelSpec, params: ModelParams, x: np.ndarray,
            mode: str = "eval", rng: SeededRng | None = None) -> np.ndarray:
    """Class scores [N, n_classes] for a batch of inputs."""
    logits, _ = forward_cached(spec, params, x, mode, rng)
    return logits


def backward(spec: ModelSpec, params: ModelParams, caches: list,
             d_logits: np.ndarray) -> dict[GradKey, np.ndarray]:
    """Chain gradients through all layers in reverse; keys mirror params."""
    grads: dict[GradKey, np.ndarray] = {}
    d_out = d_logits
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        cache = caches[i]
        if layer.kind == "conv":
            d_out, d_w, d_b = L.conv2d_backward(cache, params[i], d_out)
            grads[(i, "weights")] = d_w
            grads[(i, "bias")] = d_b
        elif layer.kind == "maxpool":
            d_out = L.maxpool_backward(cache, d_out)
        elif layer.kind == "flatten":
            d_out = d_out.reshape(cache)
        elif layer.kind == "fc":
            d_out, d_w, d_b = L.fc_backward(cache, params[i], d_out)
            grads[(i, "weights")] = d_w
            grads[(i, "bias")] = d_b
        elif layer.kind == "relu":
            d_out = L.relu_backward(cache, d_out)
        elif layer.kind == "batchnorm":
            d_out, d_gamma, d_beta = L.batchnorm_backward(cache, params[i], d_out)
            grads[(i, "gamma")] = d_gamma
            grads[(i, "beta")] = d_beta
        elif layer.kind == "dropout":
            d_out = L.dropout_backward(cache, d_out)
    return grads


def learnable_fields(layer) -> tuple[str, ...]:
    if isinstance(layer, (L.ConvLayer, L.FcLayer)):
        return ("weights", "bias")
    if isinstance(layer, L.BatchNormLayer):
        return ("gamma", "beta")
    raise TypeError(f"not a parameter-bearing layer: {type(layer)}")


def learnable_keys(params: ModelParams) -> list[GradKey]:
    """All (layer index, field) keys in a fixed deterministic order."""
    keys = []
    for i in sorted(params):
        for field in learnable_fields(params[i]):
            keys.append((i, field))
    return keys


def get_array(params: ModelParams, key: GradKey) -> np.ndarray:
    return getattr(params[key[0]], key[1])


def set_array(params: ModelParams, key: GradKey, value: np.ndarray) -> None:
    setattr(params[key[0]], key[1], value)

"""Forward and backward passes for every layer type the network uses.

All activations are NHWC. Parameter-bearing layers are small dataclasses;
the passes themselves are pure functions of (input, layer) plus explicit
scratch state (pool argmax, dropout mask), so a backward call never depends
on hidden module state. Batch-norm running statistics are the one piece of
mutable state and live on the layer object that owns them.

Convolution is lowered to a matrix multiply via im2col; the nested-loop
reference used to validate it lives with the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import SeededRng


@dataclass
class ConvLayer:
    weights: np.ndarray  # [Kh, Kw, Cin, Cout]
    bias: np.ndarray     # [Cout]
    stride: int = 1
    pad: int = 0


@dataclass
class FcLayer:
    weights: np.ndarray  # [Din, Dout]
    bias: np.ndarray     # [Dout]


@dataclass
class BatchNormLayer:
    gamma: np.ndarray         # [C]
    beta: np.ndarray          # [C]
    running_mean: np.ndarray  # [C]
    running_var: np.ndarray   # [C]
    momentum: float = 0.01
    epsilon: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32,
               momentum: float = 0.01, epsilon: float = 1e-5) -> "BatchNormLayer":
        """Identity-initialized layer: gamma 1, beta 0, running stats (0, 1)."""
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            epsilon=epsilon,
        )


@dataclass
class PoolCache:
    argmax: np.ndarray        # [N, H', W', C] window-local winner in 0..3
    input_shape: tuple[int, ...]


def _check_mode(mode: str) -> None:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise ValueError(
            f"kernel {kernel} with pad {pad} does not fit input of size {size}"
        )
    return out


def _im2col(x_pad: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """[N,Hp,Wp,C] -> [N*H'*W', kh*kw*C] with patch elements in (a,b,c) order."""
    windows = np.lib.stride_tricks.sliding_window_view(x_pad, (kh, kw), axis=(1, 2))
    # windows: [N, Hp-kh+1, Wp-kw+1, C, kh, kw]
    windows = windows[:, ::stride, ::stride]
    n, ho, wo = windows.shape[:3]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, -1)
    return np.ascontiguousarray(cols)


def conv2d_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """out[n,i,j,o] = bias[o] + sum_{a,b,c} x_pad[n, i*s+a, j*s+b, c] * w[a,b,c,o]."""
    if x.ndim != 4:
        raise ValueError(f"conv input must be [N,H,W,C], got shape {x.shape}")
    kh, kw, cin, cout = layer.weights.shape
    n, h, w, c = x.shape
    if c != cin:
        raise ValueError(f"conv expects {cin} input channels, got {c}")
    ho = conv_output_size(h, kh, layer.stride, layer.pad)
    wo = conv_output_size(w, kw, layer.stride, layer.pad)
    p = layer.pad
    x_pad = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    cols = _im2col(x_pad, kh, kw, layer.stride)
    out = cols @ layer.weights.reshape(-1, cout) + layer.bias
    return out.reshape(n, ho, wo, cout)


def conv2d_backward(x: np.ndarray, layer: ConvLayer, d_out: np.ndarray):
    """Exact gradients of conv2d_forward; returns (dX, dW, dB)."""
    kh, kw, cin, cout = layer.weights.shape
    n, h, w, _ = x.shape
    ho = conv_output_size(h, kh, layer.stride, layer.pad)
    wo = conv_output_size(w, kw, layer.stride, layer.pad)
    if d_out.shape != (n, ho, wo, cout):
        raise ValueError(
            f"d_out shape {d_out.shape} does not match forward output {(n, ho, wo, cout)}"
        )
    p, s = layer.pad, layer.stride
    x_pad = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x

    d_mat = d_out.reshape(-1, cout)
    cols = _im2col(x_pad, kh, kw, s)
    d_w = (cols.T @ d_mat).reshape(kh, kw, cin, cout)
    d_b = d_mat.sum(axis=0)

    d_cols = d_mat @ layer.weights.reshape(-1, cout).T
    d_cols = d_cols.reshape(n, ho, wo, kh, kw, cin)
    d_xpad = np.zeros_like(x_pad)
    for a in range(kh):
        for b in range(kw):
            d_xpad[:, a:a + ho * s:s, b:b + wo * s:s, :] += d_cols[:, :, :, a, b, :]
    d_x = d_xpad[:, p:p + h, p:p + w, :] if p else d_xpad
    return d_x, d_w, d_b


def maxpool_forward(x: np.ndarray):
    """2x2/2 max pool; trailing odd row/column is discarded.

    Returns (out, cache); ties go to the first element in row-major window
    scan order. The cache routes gradients back in maxpool_backward.
    """
    if x.ndim != 4:
        raise ValueError(f"pool input must be [N,H,W,C], got shape {x.shape}")
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise ValueError(f"pool needs spatial dims >= 2, got {h}x{w}")
    ho, wo = h // 2, w // 2
    xc = x[:, : 2 * ho, : 2 * wo, :]
    win = xc.reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, ho, wo, 4, c)
    argmax = win.argmax(axis=3)
    out = win.max(axis=3)
    return out, PoolCache(argmax=argmax, input_shape=x.shape)


def maxpool_backward(cache: PoolCache, d_out: np.ndarray) -> np.ndarray:
    """Route d_out to the recorded argmax positions; everything else gets 0."""
    n, h, w, c = cache.input_shape
    ho, wo = h // 2, w // 2
    if d_out.shape != (n, ho, wo, c):
        raise ValueError(f"d_out shape {d_out.shape} does not match pool output")
    d_x = np.zeros(cache.input_shape, dtype=d_out.dtype)
    for k in range(4):
        dy, dx = divmod(k, 2)
        view = d_x[:, dy: 2 * ho: 2, dx: 2 * wo: 2, :]
        view[...] = np.where(cache.argmax == k, d_out, view)
    return d_x


def fc_forward(x: np.ndarray, layer: FcLayer) -> np.ndarray:
    if x.ndim != 2:
        raise ValueError(f"fc input must be [N,D], got shape {x.shape}")
    din, dout = layer.weights.shape
    if x.shape[1] != din:
        raise ValueError(f"fc expects {din} input features, got {x.shape[1]}")
    return x @ layer.weights + layer.bias


def fc_backward(x: np.ndarray, layer: FcLayer, d_out: np.ndarray):
    """Returns (dX, dW, dB) for out = x @ W + b."""
    if d_out.shape != (x.shape[0], layer.weights.shape[1]):
        raise ValueError(f"d_out shape {d_out.shape} does not match fc output")
    return d_out @ layer.weights.T, x.T @ d_out, d_out.sum(axis=0)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 taken as 0
    return d_out * (x > 0)


def _bn_axes(x: np.ndarray, channels: int):
    if x.ndim == 4:
        axes = (0, 1, 2)
    elif x.ndim == 2:
        axes = (0,)
    else:
        raise ValueError(f"batchnorm input must be [N,H,W,C] or [N,D], got {x.shape}")
    if x.shape[-1] != channels:
        raise ValueError(f"batchnorm expects {channels} channels, got {x.shape[-1]}")
    return axes


def batchnorm_forward(x: np.ndarray, layer: BatchNormLayer, mode: str) -> np.ndarray:
    """Per-channel (conv) / per-neuron (fc) normalization.

    Train mode uses biased batch statistics and updates the running stats as
    running <- (1 - momentum) * running + momentum * batch.
    """
    _check_mode(mode)
    axes = _bn_axes(x, layer.gamma.shape[0])
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("batchnorm train mode needs batch size >= 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        layer.running_mean += layer.momentum * (mean.astype(layer.running_mean.dtype)
                                                - layer.running_mean)
        layer.running_var += layer.momentum * (var.astype(layer.running_var.dtype)
                                               - layer.running_var)
    else:
        mean = layer.running_mean
        var = layer.running_var
    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
    return (x - mean) * (layer.gamma * inv_std) + layer.beta


def batchnorm_backward(x: np.ndarray, layer: BatchNormLayer, d_out: np.ndarray):
    """Gradient of the train-mode forward, including the batch-statistic terms.

    Returns (dX, dGamma, dBeta).
    """
    if d_out.shape != x.shape:
        raise ValueError(f"d_out shape {d_out.shape} does not match input {x.shape}")
    axes = _bn_axes(x, layer.gamma.shape[0])
    # plain int: an np.int64 here would promote the whole d_x chain to float64
    m = int(np.prod([x.shape[a] for a in axes]))
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
    x_hat = (x - mean) * inv_std

    d_beta = d_out.sum(axis=axes)
    d_gamma = (d_out * x_hat).sum(axis=axes)
    d_x = (layer.gamma * inv_std / m) * (
        m * d_out - d_beta - x_hat * d_gamma
    )
    return d_x, d_gamma, d_beta


def dropout_forward(x: np.ndarray, rate: float, rng: SeededRng | None, mode: str):
    """Inverted dropout: survivors are scaled by 1/(1-rate) so eval is identity.

    Returns (out, mask); the mask already carries the survivor scale.
    """
    _check_mode(mode)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ValueError("dropout train mode needs an rng")
    keep = rng.uniform(x.size) >= rate
    mask = (keep.astype(x.dtype) / (1.0 - rate)).reshape(x.shape)
    return x * mask, mask


def dropout_backward(mask: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    return d_out * mask

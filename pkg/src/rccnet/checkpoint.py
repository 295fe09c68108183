"""Bit-exact binary checkpoints.

Layout (little-endian): magic "RCCK", version u32=1, flags u32 (bit 0 =
optimizer state present), epoch u32, seed u64, then the length-prefixed
model-spec text, then one length-prefixed float32 array per parameter field
in layer order (conv/fc: weights, bias; batchnorm: gamma, beta,
running_mean, running_var). With optimizer state: t u64, five f64
hyperparameters, decay-mode byte, then the Adam m arrays followed by the v
arrays over the learnable fields in the same order.

Serialization is canonical, so save -> load -> save reproduces the file
byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import layers as L
from .modelspec import ModelSpec, SpecParseError, parse_model_spec, render_model_spec, shape_trace
from .network import ModelParams, learnable_keys
from .optim import AdamState

MAGIC = b"RCCK"
VERSION = 1
_FLAG_ADAM = 1


class CheckpointError(ValueError):
    """Checkpoint bytes that cannot be decoded; message says where and why."""


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: ModelParams
    epoch: int = 0
    seed: int = 0
    adam: AdamState | None = None


def _param_fields(layer) -> tuple[str, ...]:
    if isinstance(layer, (L.ConvLayer, L.FcLayer)):
        return ("weights", "bias")
    if isinstance(layer, L.BatchNormLayer):
        return ("gamma", "beta", "running_mean", "running_var")
    raise TypeError(f"unexpected layer object {type(layer)}")


def _all_arrays(params: ModelParams):
    for i in sorted(params):
        for field in _param_fields(params[i]):
            yield (i, field), getattr(params[i], field)


def _pack_array(a: np.ndarray) -> bytes:
    data = np.ascontiguousarray(a, dtype="<f4")
    return struct.pack("<I", data.size) + data.tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes for {what} at offset "
                f"{self.pos}, only {len(self.data) - self.pos} available"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]

    def array(self, shape: tuple[int, ...], what: str) -> np.ndarray:
        count = self.u32(f"{what} length")
        expected = 1
        for d in shape:
            expected *= d
        if count != expected:
            raise CheckpointError(
                f"{what}: stored element count {count} does not match "
                f"spec-derived count {expected}"
            )
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def _param_shapes(spec: ModelSpec) -> dict[tuple[int, str], tuple[int, ...]]:
    trace = shape_trace(spec)
    shapes_in = [spec.input_shape] + trace
    out: dict[tuple[int, str], tuple[int, ...]] = {}
    for i, layer in enumerate(spec.layers):
        s = shapes_in[i]
        if layer.kind == "conv":
            out[(i, "weights")] = (layer.kernel, layer.kernel, s[2], layer.filters)
            out[(i, "bias")] = (layer.filters,)
        elif layer.kind == "fc":
            out[(i, "weights")] = (s[0], layer.neurons)
            out[(i, "bias")] = (layer.neurons,)
        elif layer.kind == "batchnorm":
            for field in ("gamma", "beta", "running_mean", "running_var"):
                out[(i, field)] = (s[-1],)
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    spec_text = render_model_spec(ckpt.spec).encode("utf-8")
    flags = _FLAG_ADAM if ckpt.adam is not None else 0
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<IIIQ", VERSION, flags, ckpt.epoch, ckpt.seed)
    blob += struct.pack("<I", len(spec_text)) + spec_text
    for _, array in _all_arrays(ckpt.params):
        blob += _pack_array(array)
    if ckpt.adam is not None:
        a = ckpt.adam
        blob += struct.pack("<Qddddd", a.t, a.base_lr, a.beta1, a.beta2,
                            a.epsilon, a.decay)
        blob += b"\x01" if a.decay_mode == "l2" else b"\x00"
        keys = learnable_keys(ckpt.params)
        for key in keys:
            blob += _pack_array(a.m[key])
        for key in keys:
            blob += _pack_array(a.v[key])
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    flags = r.u32("flags")
    if flags & ~_FLAG_ADAM:
        raise CheckpointError(f"unknown flag bits 0x{flags:x}")
    epoch = r.u32("epoch")
    seed = r.u64("seed")
    spec_len = r.u32("spec length")
    spec_text = r.take(spec_len, "spec text")
    try:
        spec = parse_model_spec(spec_text.decode("utf-8", errors="strict"))
    except (SpecParseError, UnicodeDecodeError) as e:
        raise CheckpointError(f"embedded model spec is invalid: {e}") from e
    try:
        shapes = _param_shapes(spec)
    except ValueError as e:
        raise CheckpointError(f"embedded model spec is not runnable: {e}") from e

    params: ModelParams = {}
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            params[i] = L.ConvLayer(
                weights=r.array(shapes[(i, "weights")], f"layer {i} conv weights"),
                bias=r.array(shapes[(i, "bias")], f"layer {i} conv bias"),
                stride=layer.stride, pad=layer.pad,
            )
        elif layer.kind == "fc":
            params[i] = L.FcLayer(
                weights=r.array(shapes[(i, "weights")], f"layer {i} fc weights"),
                bias=r.array(shapes[(i, "bias")], f"layer {i} fc bias"),
            )
        elif layer.kind == "batchnorm":
            params[i] = L.BatchNormLayer(
                gamma=r.array(shapes[(i, "gamma")], f"layer {i} bn gamma"),
                beta=r.array(shapes[(i, "beta")], f"layer {i} bn beta"),
                running_mean=r.array(shapes[(i, "running_mean")], f"layer {i} bn running mean"),
                running_var=r.array(shapes[(i, "running_var")], f"layer {i} bn running var"),
            )

    adam = None
    if flags & _FLAG_ADAM:
        t = r.u64("adam step counter")
        base_lr = r.f64("adam base lr")
        beta1 = r.f64("adam beta1")
        beta2 = r.f64("adam beta2")
        epsilon = r.f64("adam epsilon")
        decay = r.f64("adam decay")
        mode_byte = r.take(1, "adam decay mode")
        if mode_byte not in (b"\x00", b"\x01"):
            raise CheckpointError(f"bad adam decay-mode byte {mode_byte!r}")
        keys = learnable_keys(params)
        m = {k: r.array(shapes[k], f"adam m for {k}") for k in keys}
        v = {k: r.array(shapes[k], f"adam v for {k}") for k in keys}
        adam = AdamState(m=m, v=v, t=t, base_lr=base_lr, beta1=beta1,
                         beta2=beta2, epsilon=epsilon, decay=decay,
                         decay_mode="l2" if mode_byte == b"\x01" else "lr")

    if r.pos != len(r.data):
        raise CheckpointError(
            f"{len(r.data) - r.pos} unexpected trailing bytes at offset {r.pos}"
        )
    return Checkpoint(spec=spec, params=params, epoch=epoch, seed=seed, adam=adam)

"""Symbolic architecture descriptions: builders, text format, shapes, counts.

The text format is line oriented so an architecture can be audited as data:

    # comment
    model <name> input <H>x<W>x<C>
    conv <filters> <k>x<k> stride=<s> pad=<p>
    maxpool | relu | batchnorm | flatten
    fc <neurons>
    dropout <rate>
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

LAYER_KINDS = ("conv", "maxpool", "fc", "relu", "batchnorm", "dropout", "flatten")


class SpecParseError(ValueError):
    """Model-spec text that does not follow the grammar; carries a line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SpecShapeError(ValueError):
    """Architecture whose layers cannot be chained; names the offending layer."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = 0   # conv
    kernel: int = 0    # conv
    stride: int = 1    # conv
    pad: int = 0       # conv
    neurons: int = 0   # fc
    rate: float = 0.0  # dropout


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple[int, int, int]  # (H, W, C)
    layers: tuple[LayerSpec, ...]


def conv(filters: int, kernel: int, stride: int = 1, pad: int = 0) -> LayerSpec:
    return LayerSpec("conv", filters=filters, kernel=kernel, stride=stride, pad=pad)


def maxpool() -> LayerSpec:
    return LayerSpec("maxpool")


def fc(neurons: int) -> LayerSpec:
    return LayerSpec("fc", neurons=neurons)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def batchnorm() -> LayerSpec:
    return LayerSpec("batchnorm")


def dropout(rate: float) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def _conv_block(filters: int, pad: int) -> list[LayerSpec]:
    return [conv(filters, 3, 1, pad), relu(), batchnorm()]


def _fc_block(neurons: int, rate: float, dropout_first: bool) -> list[LayerSpec]:
    tail = [dropout(rate), batchnorm()] if dropout_first else [batchnorm(), dropout(rate)]
    return [fc(neurons), relu(), *tail]


def build_rccnet(dropout_first: bool = False) -> ModelSpec:
    """The 7-trainable-layer network for 32x32x3 patches, 4 output classes.

    After each fully connected ReLU the default order is batchnorm then
    dropout; ``dropout_first`` flips the two (both orders are defensible).
    """
    layers = [
        *_conv_block(32, pad=1),
        *_conv_block(32, pad=0),
        maxpool(),
        *_conv_block(64, pad=1),
        *_conv_block(64, pad=0),
        maxpool(),
        flatten(),
        *_fc_block(512, 0.5, dropout_first),
        *_fc_block(512, 0.5, dropout_first),
        fc(4),
    ]
    return ModelSpec("rccnet", (32, 32, 3), tuple(layers))


def build_softmax_cnn_in27(dropout_first: bool = False) -> ModelSpec:
    """Reference 5-trainable-layer baseline for 27x27x3 patches."""
    layers = [
        conv(36, 4, 1, 0), relu(), batchnorm(), maxpool(),
        conv(48, 3, 1, 0), relu(), batchnorm(), maxpool(),
        flatten(),
        *_fc_block(512, 0.5, dropout_first),
        *_fc_block(512, 0.5, dropout_first),
        fc(4),
    ]
    return ModelSpec("softmax_cnn_in27", (27, 27, 3), tuple(layers))


def build_softmax_cnn_32(dropout_first: bool = False) -> ModelSpec:
    """Best-effort wiring of the 32x32 baseline variant.

    Non-authoritative: a quoted parameter total for this model is 944,032
    while this wiring has 944,096 (one 32-channel batchnorm of difference);
    the gap is documented, not resolved. The 35x35x3 input is the
    upsampled-and-padded form of a 32x32x3 patch.
    """
    layers = [
        conv(32, 5, 1, 0), relu(), batchnorm(),
        conv(32, 5, 1, 0), relu(), batchnorm(),
        conv(36, 4, 1, 0), relu(), batchnorm(), maxpool(),
        conv(48, 3, 1, 0), relu(), batchnorm(), maxpool(),
        flatten(),
        *_fc_block(512, 0.5, dropout_first),
        *_fc_block(512, 0.5, dropout_first),
        fc(4),
    ]
    return ModelSpec("softmax_cnn_32", (35, 35, 3), tuple(layers))


BUILTIN_SPECS = {
    "rccnet": build_rccnet,
    "in27": build_softmax_cnn_in27,
    "softmax32": build_softmax_cnn_32,
}


def shape_trace(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Output shape after every layer (batch dimension omitted).

    Activation/batchnorm/dropout layers preserve shape. Raises SpecShapeError
    naming the offending layer if the chain is infeasible.
    """
    from .layers import conv_output_size  # local import to avoid a cycle

    h, w, c = spec.input_shape
    if h < 1 or w < 1 or c < 1:
        raise SpecShapeError(f"bad input shape {spec.input_shape}")
    shape: tuple[int, ...] = (h, w, c)
    trace = []
    for i, layer in enumerate(spec.layers):
        where = f"layer {i} ({layer.kind})"
        if layer.kind == "conv":
            if len(shape) != 3:
                raise SpecShapeError(f"{where}: needs a HxWxC input, got {shape}")
            try:
                ho = conv_output_size(shape[0], layer.kernel, layer.stride, layer.pad)
                wo = conv_output_size(shape[1], layer.kernel, layer.stride, layer.pad)
            except ValueError as e:
                raise SpecShapeError(f"{where}: {e}") from e
            shape = (ho, wo, layer.filters)
        elif layer.kind == "maxpool":
            if len(shape) != 3:
                raise SpecShapeError(f"{where}: needs a HxWxC input, got {shape}")
            if shape[0] < 2 or shape[1] < 2:
                raise SpecShapeError(f"{where}: spatial dims {shape[:2]} too small to pool")
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
        elif layer.kind == "flatten":
            n = 1
            for d in shape:
                n *= d
            shape = (n,)
        elif layer.kind == "fc":
            if len(shape) != 1:
                raise SpecShapeError(f"{where}: needs a flat input, got {shape}")
            shape = (layer.neurons,)
        elif layer.kind in ("relu", "batchnorm", "dropout"):
            pass
        else:
            raise SpecShapeError(f"{where}: unknown layer kind")
        trace.append(shape)
    return trace


def parameter_table(spec: ModelSpec) -> list[tuple[int, str, int]]:
    """(layer index, kind, learnable parameter count) for every layer.

    Batchnorm contributes 2*C (gamma and beta; running stats are not
    learnable). Pool/activation/dropout/flatten layers contribute 0.
    """
    trace = shape_trace(spec)
    shapes = [spec.input_shape] + trace
    table = []
    for i, layer in enumerate(spec.layers):
        shape_in = shapes[i]
        if layer.kind == "conv":
            count = (layer.kernel * layer.kernel * shape_in[2] + 1) * layer.filters
        elif layer.kind == "fc":
            count = shape_in[0] * layer.neurons + layer.neurons
        elif layer.kind == "batchnorm":
            count = 2 * shape_in[-1]
        else:
            count = 0
        table.append((i, layer.kind, count))
    return table


def count_parameters(spec: ModelSpec) -> int:
    """Total learnable parameter count (batchnorm gamma/beta included)."""
    return sum(count for _, _, count in parameter_table(spec))


def render_model_spec(spec: ModelSpec) -> str:
    """Canonical text form; parse_model_spec(render_model_spec(s)) == s."""
    h, w, c = spec.input_shape
    lines = [f"model {spec.name} input {h}x{w}x{c}"]
    for layer in spec.layers:
        if layer.kind == "conv":
            lines.append(
                f"conv {layer.filters} {layer.kernel}x{layer.kernel} "
                f"stride={layer.stride} pad={layer.pad}"
            )
        elif layer.kind == "fc":
            lines.append(f"fc {layer.neurons}")
        elif layer.kind == "dropout":
            lines.append(f"dropout {layer.rate!r}")
        else:
            lines.append(layer.kind)
    return "\n".join(lines) + "\n"


def _parse_int(token: str, line_no: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise SpecParseError(line_no, f"{what} must be an integer, got {token!r}") from None


def _parse_dims(token: str, line_no: int, what: str, n: int) -> tuple[int, ...]:
    parts = token.split("x")
    if len(parts) != n:
        raise SpecParseError(line_no, f"{what} must look like {'x'.join(['<n>'] * n)}")
    return tuple(_parse_int(p, line_no, what) for p in parts)


def parse_model_spec(text: str) -> ModelSpec:
    """Parse the line-oriented model-spec format; '#' starts a comment."""
    header = None
    layers: list[LayerSpec] = []
    header_line = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if header is None:
            if tokens[0] != "model":
                raise SpecParseError(line_no, "first statement must be a 'model' header")
            if len(tokens) != 4 or tokens[2] != "input":
                raise SpecParseError(line_no, "header must be 'model <name> input <H>x<W>x<C>'")
            h, w, c = _parse_dims(tokens[3], line_no, "input shape", 3)
            header = (tokens[1], (h, w, c))
            header_line = line_no
            continue
        kind = tokens[0]
        if kind == "conv":
            if len(tokens) < 3:
                raise SpecParseError(line_no, "conv needs '<filters> <k>x<k>'")
            filters = _parse_int(tokens[1], line_no, "conv filter count")
            k1, k2 = _parse_dims(tokens[2], line_no, "conv kernel", 2)
            if k1 != k2:
                raise SpecParseError(line_no, f"only square kernels are supported, got {k1}x{k2}")
            stride, pad = 1, 0
            for extra in tokens[3:]:
                key, _, value = extra.partition("=")
                if key == "stride":
                    stride = _parse_int(value, line_no, "stride")
                elif key == "pad":
                    pad = _parse_int(value, line_no, "pad")
                else:
                    raise SpecParseError(line_no, f"unknown conv field {extra!r}")
            layers.append(conv(filters, k1, stride, pad))
        elif kind == "fc":
            if len(tokens) != 2:
                raise SpecParseError(line_no, "fc needs '<neurons>'")
            layers.append(fc(_parse_int(tokens[1], line_no, "fc neuron count")))
        elif kind == "dropout":
            if len(tokens) != 2:
                raise SpecParseError(line_no, "dropout needs '<rate>'")
            try:
                rate = float(tokens[1])
            except ValueError:
                raise SpecParseError(line_no, f"dropout rate must be a number, got {tokens[1]!r}") from None
            layers.append(dropout(rate))
        elif kind in ("maxpool", "relu", "batchnorm", "flatten"):
            if len(tokens) != 1:
                raise SpecParseError(line_no, f"{kind} takes no fields")
            layers.append(LayerSpec(kind))
        else:
            raise SpecParseError(line_no, f"unknown layer kind {kind!r}")
    if header is None:
        raise SpecParseError(1, "missing 'model' header")
    name, input_shape = header
    if any(d < 1 for d in input_shape):
        raise SpecParseError(header_line, f"input dimensions must be >= 1, got {input_shape}")
    return ModelSpec(name, input_shape, tuple(layers))


def load_builtin_spec(name: str) -> ModelSpec:
    if name not in BUILTIN_SPECS:
        raise KeyError(f"unknown builtin spec {name!r}; have {sorted(BUILTIN_SPECS)}")
    return BUILTIN_SPECS[name]()


def shipped_spec_text(name: str) -> str:
    """Text of a spec file shipped with the package (rccnet, in27, softmax32)."""
    return resources.files("rccnet.specs").joinpath(f"{name}.spec").read_text("utf-8")

"""From-scratch CNN micro-framework for 4-class 32x32 histology patches."""

from .modelspec import (ModelSpec, build_rccnet, build_softmax_cnn_in27,
                        build_softmax_cnn_32, count_parameters,
                        parse_model_spec, render_model_spec, shape_trace)
from .tensor import SeededRng

__all__ = [
    "ModelSpec",
    "SeededRng",
    "build_rccnet",
    "build_softmax_cnn_in27",
    "build_softmax_cnn_32",
    "count_parameters",
    "parse_model_spec",
    "render_model_spec",
    "shape_trace",
]

__version__ = "0.1.0"

"""Command-line surface: summary, train, eval, predict, convert, synth.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .data import (CLASS_NAMES, DataFormatError, load_binary, load_image_dir,
                   normalize, synthetic_dataset, write_binary)
from .metrics import softmax
from .modelspec import (BUILTIN_SPECS, SpecParseError, SpecShapeError,
                        count_parameters, load_builtin_spec, parse_model_spec,
                        parameter_table, shape_trace)
from .network import forward
from .optim import NumericalError
from .trainer import TrainConfig, evaluate, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _load_spec(spec_arg: str):
    if spec_arg in BUILTIN_SPECS:
        return load_builtin_spec(spec_arg)
    path = Path(spec_arg)
    if not path.is_file():
        raise DataFormatError(
            f"{spec_arg!r} is neither a builtin spec {sorted(BUILTIN_SPECS)} "
            f"nor an existing file")
    return parse_model_spec(path.read_text("utf-8"))


def _load_dataset(data_arg: str):
    path = Path(data_arg)
    if path.is_dir():
        return load_image_dir(path)
    if not path.is_file():
        raise DataFormatError(f"dataset {data_arg!r} does not exist")
    return load_binary(path)


def _shape_str(shape) -> str:
    return "x".join(str(d) for d in shape)


def cmd_summary(args) -> int:
    spec = _load_spec(args.spec)
    trace = shape_trace(spec)
    table = parameter_table(spec)
    print(f"model {spec.name}  input {_shape_str(spec.input_shape)}")
    print(f"{'#':>3}  {'layer':<28} {'output':<12} {'params':>10}")
    for (i, kind, count), shape in zip(table, trace):
        layer = spec.layers[i]
        if kind == "conv":
            desc = (f"conv {layer.filters} {layer.kernel}x{layer.kernel} "
                    f"stride={layer.stride} pad={layer.pad}")
        elif kind == "fc":
            desc = f"fc {layer.neurons}"
        elif kind == "dropout":
            desc = f"dropout {layer.rate:g}"
        else:
            desc = kind
        print(f"{i:>3}  {desc:<28} {_shape_str(shape):<12} {count:>10,}")
    bn_total = sum(c for _, kind, c in table if kind == "batchnorm")
    print(f"total parameters: {count_parameters(spec):,}")
    print(f"batchnorm parameters: {bn_total:,}")
    return EXIT_OK


def cmd_train(args) -> int:
    spec = _load_spec(args.spec)
    ds = _load_dataset(args.data)
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, base_lr=args.lr,
        seed=args.seed, patience=args.patience, min_delta=args.min_delta,
        decay_mode=args.decay_mode, val_from_test=args.val_from_test,
        out_dir=Path(args.out))
    _, records = train(config, spec, ds)
    last = records[-1]
    print(f"trained {config.epochs} epochs; "
          f"final test accuracy {last.test_acc:.2f}%, "
          f"weighted F1 {last.test_f1:.4f}")
    print(f"artifacts written to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data)
    rep = evaluate(ckpt, ds)
    if args.json:
        print(json.dumps({
            "accuracy": rep.accuracy,
            "weighted_f1": rep.weighted_f1,
            "loss": rep.loss,
            "per_class": {
                name: {"precision": float(p), "recall": float(r), "f1": float(f)}
                for name, p, r, f in zip(CLASS_NAMES, rep.per_class_precision,
                                         rep.per_class_recall, rep.per_class_f1)
            },
            "confusion": rep.confusion.tolist(),
        }, indent=2))
        return EXIT_OK
    print(f"samples:      {int(rep.confusion.sum())}")
    print(f"accuracy:     {rep.accuracy:.2f} %")
    print(f"weighted F1:  {rep.weighted_f1:.4f}")
    print(f"loss:         {rep.loss:.4f}")
    print(f"{'class':<14} {'precision':>9} {'recall':>9} {'f1':>9}")
    for name, p, r, f in zip(CLASS_NAMES, rep.per_class_precision,
                             rep.per_class_recall, rep.per_class_f1):
        print(f"{name:<14} {p:>9.4f} {r:>9.4f} {f:>9.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from PIL import Image

    ckpt = load_checkpoint(args.checkpoint)
    with Image.open(args.image) as img:
        rgb = img.convert("RGB")
        h, w, c = ckpt.spec.input_shape
        if rgb.size != (w, h):
            raise DataFormatError(
                f"{args.image}: expected a {w}x{h} image, got "
                f"{rgb.size[0]}x{rgb.size[1]}")
        patch = np.asarray(rgb, dtype=np.uint8)
    x = normalize(patch[None, :, :, :])
    probs = softmax(forward(ckpt.spec, ckpt.params, x, mode="eval"))[0]
    winner = int(probs.argmax())
    print(f"predicted class: {CLASS_NAMES[winner]}")
    for name, p in zip(CLASS_NAMES, probs):
        print(f"  {name:<14} {p:.4f}")
    return EXIT_OK


def cmd_convert(args) -> int:
    ds = load_image_dir(args.from_dir)
    write_binary(ds, args.to)
    print(f"wrote {len(ds)} patches to {args.to}")
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = synthetic_dataset(args.seed, args.per_class)
    write_binary(ds, args.out)
    print(f"wrote {len(ds)} synthetic patches to {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="rccnet",
                     description="Train and evaluate small patch-classification CNNs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summary", help="shape trace and parameter table")
    p.add_argument("--spec", default="rccnet",
                   help="builtin name (rccnet, in27, softmax32) or spec file")
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help=".rccd file or image directory")
    p.add_argument("--spec", default="rccnet")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=6e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory for artifacts")
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--min-delta", type=float, default=1e-4)
    p.add_argument("--val-from-test", action="store_true",
                   help="drive the scheduler from the test split")
    p.add_argument("--decay-mode", choices=["lr", "l2"], default="lr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify a single image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("convert", help="pack an image directory into .rccd")
    p.add_argument("--from-dir", required=True)
    p.add_argument("--to", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataFormatError, CheckpointError, SpecParseError, SpecShapeError,
            FileNotFoundError) as e:
        print(f"rccnet: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"rccnet: numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"rccnet: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Training loop, evaluation, and metric-log export.

One epoch: shuffle the training indices, run forward (train mode) /
cross-entropy / backward / Adam over every batch, then compute eval-mode
metrics on the train, validation and test sets, feed the validation loss to
the plateau scheduler, and checkpoint on a new best validation loss.

All reported metrics (including training accuracy and loss) use eval-mode
forwards. Runs are fully deterministic for a fixed seed; the wall-clock
column is the only non-reproducible field, and the clock is injectable so
tests can pin it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from .checkpoint import Checkpoint, save_checkpoint
from .data import Dataset, SplitResult, make_batches, normalize, split_train_test
from .modelspec import ModelSpec
from .network import ModelParams, forward, forward_cached, backward, init_params
from .optim import NumericalError, PlateauScheduler, adam_step, init_adam
from .tensor import SeededRng

CSV_HEADER = "epoch,train_loss,train_acc,val_loss,test_acc,test_f1,lr,seconds"
EVAL_BATCH = 256


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 128
    base_lr: float = 6e-5
    seed: int = 0
    patience: int = 10
    min_delta: float = 1e-4
    decay_mode: str = "lr"      # "lr" or "l2" reading of the decay constant
    val_from_test: bool = False  # schedule on the test split instead of a carve
    val_fraction: float = 0.1    # share of the training split carved for validation
    out_dir: Path | None = None

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if not self.val_from_test and not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    test_acc: float
    test_f1: float
    lr: float
    seconds: float


def _stratified_carve(labels: np.ndarray, indices: np.ndarray, fraction: float,
                      rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """Split `indices` into (kept, carved) with per-class proportions kept."""
    kept_parts, carved_parts = [], []
    for c in np.unique(labels[indices]):
        idx = indices[labels[indices] == c]
        idx = idx[rng.permutation(len(idx))]
        k = max(1, int(fraction * len(idx)))
        carved_parts.append(idx[:k])
        kept_parts.append(idx[k:])
    return (np.sort(np.concatenate(kept_parts)),
            np.sort(np.concatenate(carved_parts)))


def _eval_logits(spec: ModelSpec, params: ModelParams, patches: np.ndarray,
                 indices: np.ndarray) -> np.ndarray:
    chunks = []
    for i in range(0, len(indices), EVAL_BATCH):
        x = normalize(patches[indices[i:i + EVAL_BATCH]])
        chunks.append(forward(spec, params, x, mode="eval"))
    return np.concatenate(chunks)


def train(config: TrainConfig, spec: ModelSpec, ds: Dataset,
          clock=time.perf_counter) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train `spec` on `ds` per `config`; returns (final checkpoint, records).

    When config.out_dir is set, writes best.rcck on every new best
    validation loss, plus final.rcck, metrics.csv and curve.svg at the end.
    A non-finite training loss aborts with NumericalError after flushing the
    metric log; the best checkpoint written so far stays on disk.
    """
    config.validate()
    counts = np.bincount(ds.labels, minlength=len(ds.class_names))
    if (counts < 2).any():
        raise ValueError(f"every class needs >= 2 samples, got counts {counts.tolist()}")

    rng = SeededRng(config.seed)
    split = split_train_test(ds, fraction=0.8, seed=config.seed)
    if config.val_from_test:
        train_idx, val_idx = split.train_indices, split.test_indices
    else:
        train_idx, val_idx = _stratified_carve(
            ds.labels, split.train_indices, config.val_fraction, rng.stream("val"))
    test_idx = split.test_indices

    params = init_params(spec, rng.stream("init"))
    adam = init_adam(params, base_lr=config.base_lr, decay_mode=config.decay_mode)
    sched = PlateauScheduler(lr=config.base_lr, patience=config.patience,
                             min_delta=config.min_delta)
    shuffle_rng = rng.stream("shuffle")
    dropout_rng = rng.stream("dropout")

    out_dir = Path(config.out_dir) if config.out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(spec=spec, params=params, epoch=epoch,
                          seed=config.seed, adam=adam)

    def flush_logs(records: list[EpochRecord]) -> None:
        if out_dir is not None and records:
            export_metrics_csv(records, out_dir / "metrics.csv")
            export_curve_svg(records, out_dir / "curve.svg")

    records: list[EpochRecord] = []
    best_val = np.inf
    for epoch in range(1, config.epochs + 1):
        started = clock()
        lr_epoch = sched.lr
        for batch in make_batches(train_idx, config.batch_size, shuffle_rng, min_last=2):
            x = normalize(ds.patches[batch])
            logits, caches = forward_cached(spec, params, x, mode="train", rng=dropout_rng)
            if not np.all(np.isfinite(logits)):
                flush_logs(records)
                raise NumericalError(
                    f"model output became non-finite at epoch {epoch}")
            loss = M.cross_entropy(logits, ds.labels[batch])
            if not np.isfinite(loss):
                flush_logs(records)
                raise NumericalError(
                    f"training loss became non-finite at epoch {epoch}")
            grads = backward(spec, params, caches,
                             M.cross_entropy_grad(logits, ds.labels[batch]))
            adam_step(adam, params, grads, lr=sched.lr)

        train_logits = _eval_logits(spec, params, ds.patches, train_idx)
        if not np.all(np.isfinite(train_logits)):
            flush_logs(records)
            raise NumericalError(
                f"evaluation output became non-finite at epoch {epoch}")
        train_loss = M.cross_entropy(train_logits, ds.labels[train_idx])
        train_acc = M.accuracy(M.predict(train_logits), ds.labels[train_idx])
        val_logits = _eval_logits(spec, params, ds.patches, val_idx)
        val_loss = M.cross_entropy(val_logits, ds.labels[val_idx])
        test_report = M.report(
            _eval_logits(spec, params, ds.patches, test_idx), ds.labels[test_idx])

        records.append(EpochRecord(
            epoch=epoch, train_loss=train_loss, train_acc=train_acc,
            val_loss=val_loss, test_acc=test_report.accuracy,
            test_f1=test_report.weighted_f1, lr=lr_epoch,
            seconds=clock() - started))

        sched.observe(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            if out_dir is not None:
                save_checkpoint(out_dir / "best.rcck", snapshot(epoch))

    final = snapshot(config.epochs)
    if out_dir is not None:
        save_checkpoint(out_dir / "final.rcck", final)
    flush_logs(records)
    return final, records


def evaluate(ckpt: Checkpoint, ds: Dataset) -> M.MetricsReport:
    """Eval-mode forward over the whole dataset, full metric report."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    logits = _eval_logits(ckpt.spec, ckpt.params, ds.patches, np.arange(len(ds)))
    return M.report(logits, ds.labels)


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def export_metrics_csv(records: list[EpochRecord], path) -> None:
    if not records:
        raise ValueError("no epoch records to export")
    lines = [CSV_HEADER]
    for r in records:
        lines.append(",".join([
            str(r.epoch), _fmt(r.train_loss), _fmt(r.train_acc),
            _fmt(r.val_loss), _fmt(r.test_acc), _fmt(r.test_f1),
            _fmt(r.lr), _fmt(r.seconds)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_curve_svg(records: list[EpochRecord], path,
                     width: int = 640, height: int = 400) -> None:
    """Line plot of test accuracy (percent) against epoch."""
    if not records:
        raise ValueError("no epoch records to plot")
    left, right, top, bottom = 50, 10, 10, 30
    plot_w = width - left - right
    plot_h = height - top - bottom
    max_epoch = max(r.epoch for r in records)
    span = max(max_epoch - 1, 1)
    points = []
    for r in records:
        x = left + plot_w * (r.epoch - 1) / span
        y = top + plot_h * (1.0 - r.test_acc / 100.0)
        points.append(f"{x:.1f},{y:.1f}")
    y_ticks = "".join(
        f'<text x="{left - 8}" y="{top + plot_h * (1 - v / 100) + 4:.1f}" '
        f'text-anchor="end" font-size="11">{v}</text>'
        for v in (0, 25, 50, 75, 100))
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>'
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" '
        f'y2="{top + plot_h}" stroke="black"/>'
        f"{y_ticks}"
        f'<text x="{left + plot_w // 2}" y="{height - 8}" text-anchor="middle" '
        f'font-size="11">epoch (test accuracy %)</text>'
        f'<polyline points="{" ".join(points)}" fill="none" stroke="#1f77b4" '
        f'stroke-width="1.5"/>'
        f"</svg>"
    )
    Path(path).write_text(svg, encoding="utf-8")

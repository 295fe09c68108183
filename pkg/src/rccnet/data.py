"""Dataset ingestion, splitting, batching, and the synthetic test corpus.

The canonical on-disk form is the .rccd binary file (little-endian): magic
"RCCD", version u32=1, count u32, class_count u32=4, then count records of
[label u8][32*32*3 bytes of RGB, interleaved per pixel, rows top to
bottom]. Patches are 32x32 8-bit RGB; labels index the fixed class table.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import SeededRng

CLASS_NAMES = ("Epithelial", "Fibroblast", "Inflammatory", "Miscellaneous")
PATCH_SIZE = 32
PATCH_BYTES = PATCH_SIZE * PATCH_SIZE * 3
MAGIC = b"RCCD"
VERSION = 1


class DataFormatError(ValueError):
    """Dataset bytes or files that violate the format; message says where."""


@dataclass
class Dataset:
    patches: np.ndarray  # [N, 32, 32, 3] uint8
    labels: np.ndarray   # [N] int64 in [0, 4)
    class_names: tuple[str, ...] = CLASS_NAMES

    def __post_init__(self):
        if self.patches.ndim != 4 or self.patches.shape[1:] != (PATCH_SIZE, PATCH_SIZE, 3):
            raise DataFormatError(f"patches must be [N,32,32,3], got {self.patches.shape}")
        if self.patches.dtype != np.uint8:
            raise DataFormatError(f"patches must be uint8, got {self.patches.dtype}")
        if len(self.labels) != len(self.patches):
            raise DataFormatError(
                f"{len(self.patches)} patches but {len(self.labels)} labels")
        if len(self.labels) and self.labels.max() >= len(self.class_names):
            raise DataFormatError(f"label {self.labels.max()} out of range")

    def __len__(self) -> int:
        return len(self.patches)


@dataclass(frozen=True)
class SplitResult:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int


def write_binary(ds: Dataset, path) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<III", VERSION, len(ds), len(ds.class_names))
    for label, patch in zip(ds.labels, ds.patches):
        blob += struct.pack("<B", int(label))
        blob += patch.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_binary(path) -> Dataset:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise DataFormatError(
            f"file too short for header: {len(data)} bytes, need 16")
    if data[:4] != MAGIC:
        raise DataFormatError(f"bad magic {data[:4]!r} at offset 0, expected {MAGIC!r}")
    version, count, class_count = struct.unpack("<III", data[4:16])
    if version != VERSION:
        raise DataFormatError(f"unsupported version {version} at offset 4")
    if class_count != len(CLASS_NAMES):
        raise DataFormatError(
            f"class count {class_count} at offset 12, expected {len(CLASS_NAMES)}")
    record = 1 + PATCH_BYTES
    expected = 16 + count * record
    if len(data) != expected:
        raise DataFormatError(
            f"file holds {len(data)} bytes but header count {count} implies "
            f"{expected} (truncated or trailing data)")
    labels = np.empty(count, dtype=np.int64)
    patches = np.empty((count, PATCH_SIZE, PATCH_SIZE, 3), dtype=np.uint8)
    for i in range(count):
        off = 16 + i * record
        label = data[off]
        if label >= class_count:
            raise DataFormatError(
                f"record {i}: label {label} at offset {off} exceeds class count")
        labels[i] = label
        patches[i] = np.frombuffer(
            data, dtype=np.uint8, count=PATCH_BYTES, offset=off + 1
        ).reshape(PATCH_SIZE, PATCH_SIZE, 3)
    return Dataset(patches=patches, labels=labels)


def load_image_dir(path) -> Dataset:
    """Read `<path>/<ClassName>/*.png`; every image must be 32x32 8-bit RGB.

    Files are taken in sorted order per class, so directory listing order
    never affects the result.
    """
    from PIL import Image

    root = Path(path)
    if not root.is_dir():
        raise DataFormatError(f"{root} is not a directory")
    for sub in sorted(p.name for p in root.iterdir() if p.is_dir()):
        if sub not in CLASS_NAMES:
            raise DataFormatError(
                f"unknown class folder {sub!r}; expected one of {CLASS_NAMES}")
    patches = []
    labels = []
    for label, name in enumerate(CLASS_NAMES):
        class_dir = root / name
        if not class_dir.is_dir():
            continue
        for file in sorted(class_dir.glob("*.png")):
            with Image.open(file) as img:
                rgb = img.convert("RGB")
                if rgb.size != (PATCH_SIZE, PATCH_SIZE):
                    raise DataFormatError(
                        f"{file}: expected {PATCH_SIZE}x{PATCH_SIZE}, "
                        f"got {rgb.size[0]}x{rgb.size[1]}")
                patches.append(np.asarray(rgb, dtype=np.uint8))
            labels.append(label)
    if not patches:
        raise DataFormatError(f"no class folders with .png files under {root}")
    return Dataset(
        patches=np.stack(patches), labels=np.asarray(labels, dtype=np.int64))


def normalize(patches: np.ndarray) -> np.ndarray:
    """uint8 RGB -> float32 in [0, 1] (divide by 255, no mean subtraction)."""
    return patches.astype(np.float32) / 255.0


def split_train_test(ds: Dataset, fraction: float = 0.8, seed: int = 0) -> SplitResult:
    """Stratified shuffled split with |train| = floor(fraction * N) exactly.

    Each class contributes floor(fraction * n_c) to train, then classes with
    the largest fractional remainders absorb the global shortfall.
    """
    n = len(ds)
    if n < 5:
        raise ValueError(f"need at least 5 samples to split, got {n}")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    target = int(fraction * n)
    rng = SeededRng(seed).stream("split")
    class_ids = np.unique(ds.labels)
    takes = {}
    remainders = []
    for c in class_ids:
        n_c = int((ds.labels == c).sum())
        if n_c < 2:
            raise ValueError(f"class {c} has only {n_c} sample(s); need >= 2")
        exact = fraction * n_c
        takes[c] = int(exact)
        remainders.append((-(exact - int(exact)), int(c)))
    shortfall = target - sum(takes.values())
    for _, c in sorted(remainders)[:shortfall]:
        takes[c] += 1
    train_parts, test_parts = [], []
    for c in class_ids:
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(len(idx))]
        train_parts.append(idx[: takes[c]])
        test_parts.append(idx[takes[c]:])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts))
    if len(test) == 0 or len(train) == 0:
        raise ValueError(f"split fraction {fraction} leaves an empty side")
    return SplitResult(train_indices=train, test_indices=test, seed=seed)


def make_batches(indices: np.ndarray, batch_size: int, rng: SeededRng,
                 min_last: int = 1) -> list[np.ndarray]:
    """Shuffle `indices` and cut into batches; the short final batch is kept.

    `min_last` > 1 merges a too-short final batch into the previous one
    (train mode needs >= 2 samples per batch for batch norm).
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    indices = np.asarray(indices)
    order = indices[rng.permutation(len(indices))]
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_last:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    if batches and len(batches[0]) < min_last:
        raise ValueError(
            f"cannot form batches of >= {min_last} from {len(indices)} indices")
    return batches


def _blob_mask(kind: int, jitter: np.ndarray) -> np.ndarray:
    """Per-class geometric motif on a 32x32 grid, jittered per sample."""
    y, x = np.mgrid[0:PATCH_SIZE, 0:PATCH_SIZE]
    cy, cx = 16 + jitter[0], 16 + jitter[1]
    if kind == 0:  # filled disk
        return ((y - cy) ** 2 + (x - cx) ** 2) <= (9 + jitter[2]) ** 2
    if kind == 1:  # horizontal bars
        return ((y + jitter[0]) // 4) % 2 == 0
    if kind == 2:  # diagonal bands
        return ((x + y + jitter[1]) // 5) % 2 == 0
    d2 = (y - cy) ** 2 + (x - cx) ** 2  # ring
    return (d2 >= (6 + jitter[2]) ** 2) & (d2 <= (12 + jitter[2]) ** 2)


_BASE_COLORS = np.array(
    [[200, 60, 60], [60, 200, 60], [60, 60, 200], [200, 200, 60]], dtype=np.int32)
_BACKGROUND = np.array([40, 40, 40], dtype=np.int32)


def synthetic_dataset(seed: int, n_per_class: int) -> Dataset:
    """Deterministic 4-class corpus of visually separable 32x32x3 patches.

    Each class pairs a base color with a blob motif plus uniform pixel
    noise; classes are far apart in mean color relative to within-class
    spread, so small models separate them quickly.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = SeededRng(seed).stream("synth")
    patches = np.empty((4 * n_per_class, PATCH_SIZE, PATCH_SIZE, 3), dtype=np.uint8)
    labels = np.empty(4 * n_per_class, dtype=np.int64)
    row = 0
    for c in range(4):
        for _ in range(n_per_class):
            jitter = rng.integers(-3, 4, 3)
            mask = _blob_mask(c, jitter)
            img = np.where(mask[:, :, None], _BASE_COLORS[c], _BACKGROUND)
            noise = rng.integers(-25, 26, (PATCH_SIZE, PATCH_SIZE, 3))
            patches[row] = np.clip(img + noise, 0, 255).astype(np.uint8)
            labels[row] = c
            row += 1
    return Dataset(patches=patches, labels=labels)

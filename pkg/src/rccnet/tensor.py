"""Dense tensor helpers and the seeded random source used everywhere else.

Tensors are plain C-contiguous numpy arrays (float32 in the training path,
float64 in gradient tests). All randomness in the package flows through
:class:`SeededRng`, which derives independent named sub-streams from one
master seed so that adding a new consumer never perturbs existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np

DEFAULT_DTYPE = np.float32


def tensor_new(shape, fill=0.0, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Allocate a tensor of `shape` filled with `fill`.

    Raises ValueError for an empty shape or any dimension < 1.
    """
    dims = tuple(int(d) for d in shape)
    if len(dims) == 0:
        raise ValueError("tensor shape must have at least one dimension")
    for d in dims:
        if d < 1:
            raise ValueError(f"tensor dimensions must be >= 1, got {dims}")
    return np.full(dims, fill, dtype=dtype)


def tensor_flatten(t: np.ndarray, keep_batch: bool = False) -> np.ndarray:
    """Flatten to one dimension, preserving row-major element order.

    With ``keep_batch=True`` the leading dimension is kept and the rest is
    flattened, e.g. [N,6,6,64] -> [N,2304].
    """
    t = np.ascontiguousarray(t)
    if keep_batch:
        if t.ndim < 1:
            raise ValueError("keep_batch requires at least one dimension")
        return t.reshape(t.shape[0], -1)
    return t.reshape(-1)


class SeededRng:
    """Deterministic random source (numpy PCG64) with named sub-streams.

    The same (seed, stream path) always yields the same sequence. Child
    streams are derived by folding the crc32 of the stream name into the
    seed material, so streams are independent and stable under code growth.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = _path
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, *_path]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def stream(self, name: str) -> "SeededRng":
        """Return an independent child stream identified by `name`."""
        tag = zlib.crc32(name.encode("utf-8"))
        return SeededRng(self.seed, self._path + (tag,))

    def uniform(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform bounds require lo < hi, got [{lo}, {hi})")
        return self._gen.random(int(n)) * (hi - lo) + lo

    def normal(self, shape, std: float = 1.0, dtype=np.float64) -> np.ndarray:
        return (self._gen.standard_normal(shape) * std).astype(dtype)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(int(n))

    def integers(self, lo: int, hi: int, shape) -> np.ndarray:
        return self._gen.integers(lo, hi, size=shape)


def rng_uniform(rng: SeededRng, n: int, lo: float, hi: float) -> np.ndarray:
    """n uniform draws in [lo, hi); advances `rng` deterministically."""
    return rng.uniform(n, lo, hi)

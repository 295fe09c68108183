import numpy as np
import numpy.testing as npt
import pytest

from rccnet.tensor import (
    DEFAULT_DTYPE,
    SeededRng,
    rng_uniform,
    tensor_flatten,
    tensor_new,
)


def test_tensor_new_zero_fill_shape_dtype():
    t = tensor_new((2, 3, 4))
    assert t.shape == (2, 3, 4)
    assert t.dtype == DEFAULT_DTYPE
    npt.assert_array_equal(t, np.zeros((2, 3, 4), dtype=DEFAULT_DTYPE))


def test_tensor_new_fill_value():
    t = tensor_new((5,), fill=2.5)
    npt.assert_allclose(t, np.full(5, 2.5, dtype=DEFAULT_DTYPE))


def test_tensor_new_rejects_bad_shapes():
    for shape in [(), (0,), (3, 0, 2), (-1, 4)]:
        with pytest.raises(ValueError):
            tensor_new(shape)


def test_flatten_drops_to_1d():
    t = tensor_new((2, 3, 4), fill=1.0)
    assert tensor_flatten(t).shape == (24,)


def test_flatten_keep_batch():
    rng = SeededRng(3)
    x = rng.stream("init").normal((4, 5, 5, 2), std=1.0)
    flat = tensor_flatten(x, keep_batch=True)
    assert flat.shape == (4, 50)
    # row-major within each sample
    npt.assert_array_equal(flat[1], x[1].reshape(-1))


def test_rng_same_seed_same_sequence():
    for seed in range(10):
        a = SeededRng(seed).uniform(100, -1.0, 1.0)
        b = SeededRng(seed).uniform(100, -1.0, 1.0)
        npt.assert_array_equal(a, b)


def test_rng_different_seeds_differ():
    a = SeededRng(0).uniform(50, 0.0, 1.0)
    b = SeededRng(1).uniform(50, 0.0, 1.0)
    assert not np.array_equal(a, b)


def test_uniform_bounds_and_spread():
    rng = SeededRng(12)
    vals = rng.uniform(10000, -2.0, 3.0)
    assert vals.min() >= -2.0
    assert vals.max() < 3.0
    # crude spread check: both halves of the interval get hits
    assert (vals < 0.5).sum() > 3000
    assert (vals > 0.5).sum() > 3000


def test_uniform_rejects_bad_interval():
    rng = SeededRng(0)
    with pytest.raises(ValueError):
        rng.uniform(10, 1.0, 1.0)
    with pytest.raises(ValueError):
        rng.uniform(10, 2.0, -2.0)


def test_named_streams_are_independent():
    # drawing from one stream must not disturb another
    r1 = SeededRng(7)
    r2 = SeededRng(7)
    r1.stream("shuffle").permutation(1000)  # extra consumption on r1 only
    a = r1.stream("dropout").uniform(64, 0.0, 1.0)
    b = r2.stream("dropout").uniform(64, 0.0, 1.0)
    npt.assert_array_equal(a, b)


def test_streams_differ_from_each_other():
    rng = SeededRng(5)
    a = rng.stream("init").uniform(64, 0.0, 1.0)
    b = rng.stream("shuffle").uniform(64, 0.0, 1.0)
    assert not np.array_equal(a, b)


def test_nested_streams():
    a = SeededRng(9).stream("outer").stream("inner").uniform(8, 0.0, 1.0)
    b = SeededRng(9).stream("outer").stream("inner").uniform(8, 0.0, 1.0)
    c = SeededRng(9).stream("inner").stream("outer").uniform(8, 0.0, 1.0)
    npt.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_normal_moments():
    rng = SeededRng(21)
    x = rng.normal((200, 500), std=0.3)
    assert abs(float(x.mean())) < 5e-3
    assert abs(float(x.std()) - 0.3) < 5e-3


def test_normal_honors_dtype():
    assert SeededRng(0).normal((4,), std=1.0, dtype=np.float32).dtype == np.float32
    assert SeededRng(0).normal((4,), std=1.0).dtype == np.float64


def test_permutation_is_a_permutation():
    for seed in range(5):
        p = SeededRng(seed).permutation(257)
        npt.assert_array_equal(np.sort(p), np.arange(257))


def test_integers_range():
    rng = SeededRng(4)
    vals = rng.integers(2, 9, (1000,))
    assert vals.min() >= 2
    assert vals.max() <= 8
    assert set(np.unique(vals)) == set(range(2, 9))


def test_rng_uniform_wrapper_matches_method():
    a = SeededRng(11).uniform(32, 0.0, 2.0)
    b = rng_uniform(SeededRng(11), 32, 0.0, 2.0)
    npt.assert_array_equal(a, b)

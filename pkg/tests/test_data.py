import struct

import numpy as np
import numpy.testing as npt
import pytest
from PIL import Image

from rccnet.data import (
    CLASS_NAMES,
    DataFormatError,
    Dataset,
    load_binary,
    load_image_dir,
    make_batches,
    normalize,
    split_train_test,
    synthetic_dataset,
    write_binary,
)
from rccnet.tensor import SeededRng


def _tiny_dataset(n=12, seed=50):
    rng = SeededRng(seed)
    patches = rng.integers(0, 256, (n, 32, 32, 3)).astype(np.uint8)
    labels = (np.arange(n) % 4).astype(np.int64)
    return Dataset(patches=patches, labels=labels)


def _dataset_with_counts(counts):
    n = sum(counts)
    patches = np.zeros((n, 32, 32, 3), dtype=np.uint8)
    labels = np.concatenate([np.full(c, k, dtype=np.int64)
                             for k, c in enumerate(counts)])
    return Dataset(patches=patches, labels=labels)


def test_dataset_validation():
    with pytest.raises(DataFormatError):
        Dataset(patches=np.zeros((2, 16, 16, 3), dtype=np.uint8),
                labels=np.zeros(2, dtype=np.int64))
    with pytest.raises(DataFormatError):
        Dataset(patches=np.zeros((2, 32, 32, 3), dtype=np.float32),
                labels=np.zeros(2, dtype=np.int64))
    with pytest.raises(DataFormatError):
        Dataset(patches=np.zeros((2, 32, 32, 3), dtype=np.uint8),
                labels=np.zeros(3, dtype=np.int64))
    with pytest.raises(DataFormatError):
        Dataset(patches=np.zeros((2, 32, 32, 3), dtype=np.uint8),
                labels=np.array([0, 7], dtype=np.int64))


def test_binary_round_trip(tmp_path):
    ds = _tiny_dataset()
    path = tmp_path / "data.rccd"
    write_binary(ds, path)
    back = load_binary(path)
    npt.assert_array_equal(back.patches, ds.patches)
    npt.assert_array_equal(back.labels, ds.labels)


def test_binary_layout_and_size(tmp_path):
    ds = _tiny_dataset(n=5)
    path = tmp_path / "data.rccd"
    write_binary(ds, path)
    raw = path.read_bytes()
    assert raw[:4] == b"RCCD"
    version, count, class_count = struct.unpack("<III", raw[4:16])
    assert (version, count, class_count) == (1, 5, 4)
    assert len(raw) == 16 + 5 * (1 + 32 * 32 * 3)
    # first record: label byte then row-major RGB bytes
    assert raw[16] == ds.labels[0]
    npt.assert_array_equal(
        np.frombuffer(raw[17:17 + 3072], dtype=np.uint8),
        ds.patches[0].reshape(-1))


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "data.rccd"
    write_binary(_tiny_dataset(), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"PNG\x00"
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError) as exc:
        load_binary(path)
    assert "magic" in str(exc.value)


def test_load_rejects_bad_version_and_class_count(tmp_path):
    path = tmp_path / "data.rccd"
    write_binary(_tiny_dataset(), path)
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 4, 3)
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError) as exc:
        load_binary(path)
    assert "version" in str(exc.value)

    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 4, 1)
    struct.pack_into("<I", raw, 12, 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError) as exc:
        load_binary(path)
    assert "class count" in str(exc.value)


def test_load_rejects_truncation_and_trailing(tmp_path):
    path = tmp_path / "data.rccd"
    write_binary(_tiny_dataset(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-100])
    with pytest.raises(DataFormatError):
        load_binary(path)
    path.write_bytes(raw + b"\x00")
    with pytest.raises(DataFormatError):
        load_binary(path)
    path.write_bytes(raw[:10])
    with pytest.raises(DataFormatError):
        load_binary(path)


def test_load_rejects_out_of_range_label(tmp_path):
    path = tmp_path / "data.rccd"
    write_binary(_tiny_dataset(n=3), path)
    raw = bytearray(path.read_bytes())
    raw[16 + (1 + 3072)] = 4  # second record's label byte
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError) as exc:
        load_binary(path)
    assert "record 1" in str(exc.value)


def test_image_dir_round_trip(tmp_path):
    ds = _tiny_dataset(n=8, seed=51)
    for i in range(len(ds)):
        d = tmp_path / CLASS_NAMES[ds.labels[i]]
        d.mkdir(exist_ok=True)
        Image.fromarray(ds.patches[i]).save(d / f"p{i:03d}.png")
    back = load_image_dir(tmp_path)
    assert len(back) == 8
    # same per-class multisets of patches (order within class is by filename)
    for c in range(4):
        ours = ds.patches[ds.labels == c]
        theirs = back.patches[back.labels == c]
        assert sorted(map(lambda a: a.tobytes(), ours)) == \
            sorted(map(lambda a: a.tobytes(), theirs))


def test_image_dir_sorted_order_is_stable(tmp_path):
    d = tmp_path / "Epithelial"
    d.mkdir()
    rng = SeededRng(52)
    imgs = rng.integers(0, 256, (3, 32, 32, 3)).astype(np.uint8)
    # write files out of name order
    for name, img in zip(["c.png", "a.png", "b.png"], imgs):
        Image.fromarray(img).save(d / name)
    back = load_image_dir(tmp_path)
    npt.assert_array_equal(back.patches[0], imgs[1])  # a.png
    npt.assert_array_equal(back.patches[1], imgs[2])  # b.png
    npt.assert_array_equal(back.patches[2], imgs[0])  # c.png


def test_image_dir_rejects_wrong_size(tmp_path):
    d = tmp_path / "Fibroblast"
    d.mkdir()
    Image.new("RGB", (64, 64)).save(d / "big.png")
    with pytest.raises(DataFormatError) as exc:
        load_image_dir(tmp_path)
    assert "32x32" in str(exc.value).replace("×", "x")


def test_image_dir_rejects_unknown_class_folder(tmp_path):
    (tmp_path / "Stromal").mkdir()
    with pytest.raises(DataFormatError) as exc:
        load_image_dir(tmp_path)
    assert "Stromal" in str(exc.value)


def test_image_dir_rejects_empty_tree(tmp_path):
    with pytest.raises(DataFormatError):
        load_image_dir(tmp_path)


def test_normalize_range_and_dtype():
    patches = np.array([[[[0, 128, 255]] * 32] * 32], dtype=np.uint8)
    out = normalize(patches)
    assert out.dtype == np.float32
    assert out.min() == 0.0
    assert out.max() == 1.0
    npt.assert_allclose(out[0, 0, 0], [0.0, 128 / 255, 1.0], rtol=1e-6)


def test_split_reference_sizes():
    # class sizes 7,722 / 5,712 / 6,971 / 2,039 sum to 22,444; an 80/20
    # split must yield exactly 17,955 / 4,489
    ds = _dataset_with_counts([7722, 5712, 6971, 2039])
    res = split_train_test(ds, fraction=0.8, seed=0)
    assert len(res.train_indices) == 17_955
    assert len(res.test_indices) == 4_489


def test_split_stratification_largest_remainder():
    ds = _dataset_with_counts([7722, 5712, 6971, 2039])
    res = split_train_test(ds, fraction=0.8, seed=3)
    per_class = [int((ds.labels[res.train_indices] == c).sum()) for c in range(4)]
    # floors 6177/4569/5576/1631 plus one each for the largest remainders
    # (Inflammatory .8, then the .6 tie broken toward the lower class id)
    assert per_class == [6178, 4569, 5577, 1631]


def test_split_partition_properties():
    ds = _tiny_dataset(n=40, seed=53)
    res = split_train_test(ds, fraction=0.8, seed=1)
    train, test = set(res.train_indices.tolist()), set(res.test_indices.tolist())
    assert train & test == set()
    assert train | test == set(range(40))
    assert len(res.train_indices) == 32


def test_split_deterministic_per_seed():
    ds = _tiny_dataset(n=40, seed=54)
    a = split_train_test(ds, seed=7)
    b = split_train_test(ds, seed=7)
    c = split_train_test(ds, seed=8)
    npt.assert_array_equal(a.train_indices, b.train_indices)
    npt.assert_array_equal(a.test_indices, b.test_indices)
    assert not np.array_equal(a.train_indices, c.train_indices)
    assert a.seed == 7


def test_split_rejects_degenerate_inputs():
    with pytest.raises(ValueError):
        split_train_test(_tiny_dataset(n=4), fraction=0.8)
    ds = _tiny_dataset(n=8)
    with pytest.raises(ValueError):
        split_train_test(ds, fraction=0.0)
    with pytest.raises(ValueError):
        split_train_test(ds, fraction=1.0)
    # a class with a single sample cannot be stratified
    lone = Dataset(patches=np.zeros((7, 32, 32, 3), dtype=np.uint8),
                   labels=np.array([0, 0, 1, 1, 2, 2, 3], dtype=np.int64))
    with pytest.raises(ValueError):
        split_train_test(lone, fraction=0.8)


def test_make_batches_partition():
    rng = SeededRng(55)
    indices = np.arange(100, 150)
    batches = make_batches(indices, 16, rng.stream("shuffle"))
    assert [len(b) for b in batches] == [16, 16, 16, 2]
    together = np.concatenate(batches)
    npt.assert_array_equal(np.sort(together), indices)


def test_make_batches_shuffles_deterministically():
    indices = np.arange(64)
    a = make_batches(indices, 8, SeededRng(9).stream("shuffle"))
    b = make_batches(indices, 8, SeededRng(9).stream("shuffle"))
    c = make_batches(indices, 8, SeededRng(10).stream("shuffle"))
    for x, y in zip(a, b):
        npt.assert_array_equal(x, y)
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))
    assert not np.array_equal(a[0], np.arange(8))  # actually shuffled


def test_make_batches_min_last_merges_short_tail():
    indices = np.arange(33)
    merged = make_batches(indices, 16, SeededRng(0).stream("s"), min_last=2)
    assert [len(b) for b in merged] == [16, 17]
    npt.assert_array_equal(np.sort(np.concatenate(merged)), indices)
    kept = make_batches(indices, 16, SeededRng(0).stream("s"), min_last=1)
    assert [len(b) for b in kept] == [16, 16, 1]


def test_make_batches_rejects_bad_batch_size():
    with pytest.raises(ValueError):
        make_batches(np.arange(10), 0, SeededRng(0))


def test_synthetic_dataset_shapes_and_labels():
    ds = synthetic_dataset(seed=3, n_per_class=10)
    assert len(ds) == 40
    assert ds.patches.shape == (40, 32, 32, 3)
    assert ds.patches.dtype == np.uint8
    npt.assert_array_equal(ds.labels, np.repeat(np.arange(4), 10))


def test_synthetic_dataset_deterministic():
    a = synthetic_dataset(seed=5, n_per_class=6)
    b = synthetic_dataset(seed=5, n_per_class=6)
    c = synthetic_dataset(seed=6, n_per_class=6)
    npt.assert_array_equal(a.patches, b.patches)
    assert not np.array_equal(a.patches, c.patches)


def test_synthetic_classes_are_color_separable():
    ds = synthetic_dataset(seed=1, n_per_class=25)
    means = np.stack([
        normalize(ds.patches[ds.labels == c]).mean(axis=(0, 1, 2))
        for c in range(4)])
    # every pair of class mean colors is far apart relative to pixel noise
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.linalg.norm(means[i] - means[j]) > 0.08, (i, j)


def test_synthetic_within_class_variation():
    ds = synthetic_dataset(seed=2, n_per_class=5)
    first = ds.patches[ds.labels == 0]
    assert not np.array_equal(first[0], first[1])

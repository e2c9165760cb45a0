import gzip
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from hbdr.dataio import (DatasetError, LabeledDataset, export_grid, export_pgm, export_tiles,
                         load_data, load_dir, load_idx, mosaic, read_pgm, stratified_split,
                         to_bytes, to_grayscale, write_idx)


def make_tree(root, per_class=3, size=32, seed=0):
    g = np.random.default_rng(seed)
    for c in range(10):
        d = root / str(c)
        d.mkdir(parents=True)
        for k in range(per_class):
            px = g.integers(0, 256, (size, size), dtype=np.uint8)
            ext = "png" if k % 2 else "pgm"
            Image.fromarray(px).save(d / f"img{k:02d}.{ext}")
    return root


def toy_dataset(per_class=6):
    labels = np.repeat(np.arange(10), per_class)
    images = np.random.default_rng(0).random((labels.size, 1, 32, 32)).astype(np.float32)
    return LabeledDataset(images, labels)


# ------------------------------------------------------------------ directory trees

def test_load_dir_reads_tree(tmp_path):
    ds = load_dir(make_tree(tmp_path / "data"))
    assert ds.images.shape == (30, 1, 32, 32)
    assert ds.images.dtype == np.float32
    np.testing.assert_array_equal(ds.class_counts(), [3] * 10)
    # order: class by class, files by name
    first = np.asarray(Image.open(tmp_path / "data" / "0" / "img00.pgm")) / 255.0
    np.testing.assert_allclose(ds.images[0, 0], first, atol=1e-7)
    assert 0.0 <= ds.images.min() and ds.images.max() <= 1.0


def test_load_dir_is_idempotent(tmp_path):
    root = make_tree(tmp_path / "data")
    assert load_dir(root).images.tobytes() == load_dir(root).images.tobytes()


def test_load_dir_empty(tmp_path):
    with pytest.raises(DatasetError, match="no classes found"):
        load_dir(tmp_path)


def test_load_dir_wrong_size_names_file(tmp_path):
    root = make_tree(tmp_path / "data", per_class=1)
    stray = root / "4" / "stray.png"
    Image.fromarray(np.zeros((28, 28), np.uint8)).save(stray)
    with pytest.raises(DatasetError, match="stray.png"):
        load_dir(root)


def test_load_dir_unknown_class(tmp_path):
    root = make_tree(tmp_path / "data", per_class=1)
    (root / "eleven").mkdir()
    with pytest.raises(DatasetError, match="unknown class"):
        load_dir(root)


def test_load_dir_unreadable_file(tmp_path):
    root = make_tree(tmp_path / "data", per_class=1)
    (root / "3" / "broken.png").write_bytes(b"not an image")
    with pytest.raises(DatasetError, match="broken.png"):
        load_dir(root)


def test_rgb_images_use_luma(tmp_path):
    root = make_tree(tmp_path / "data", per_class=1)
    rgb = np.zeros((32, 32, 3), np.uint8)
    rgb[..., 0], rgb[..., 1], rgb[..., 2] = 200, 100, 50
    Image.fromarray(rgb).save(root / "7" / "zz.png")
    ds = load_dir(root)
    expected = (0.299 * 200 + 0.587 * 100 + 0.114 * 50) / 255
    np.testing.assert_allclose(ds.images[ds.labels == 7][-1], expected, atol=1e-6)
    np.testing.assert_allclose(to_grayscale(np.array([[[255, 255, 255]]])), [[255.0]])


# ------------------------------------------------------------------ IDX

def test_idx_round_trip_and_padding(tmp_path):
    g = np.random.default_rng(0)
    imgs = g.integers(0, 256, (7, 28, 28), dtype=np.uint8)
    labels = g.integers(0, 10, 7)
    write_idx(imgs, labels, tmp_path / "i", tmp_path / "l")
    ds = load_idx(tmp_path / "i", tmp_path / "l")
    assert ds.images.shape == (7, 1, 32, 32)
    np.testing.assert_array_equal(ds.labels, labels)
    np.testing.assert_allclose(ds.images[:, 0, 2:30, 2:30], imgs / 255.0, atol=1e-7)
    border = ds.images.copy()
    border[:, :, 2:30, 2:30] = 0
    assert not border.any()


def test_idx_header_bytes(tmp_path):
    write_idx(np.zeros((2, 28, 28)), np.array([3, 4]), tmp_path / "i", tmp_path / "l")
    assert (tmp_path / "i").read_bytes()[:16] == bytes.fromhex("00000803 00000002 0000001c 0000001c")
    assert (tmp_path / "l").read_bytes() == bytes.fromhex("00000801 00000002 03 04")


def test_idx_reads_gzip(tmp_path):
    write_idx(np.ones((3, 28, 28)), np.arange(3), tmp_path / "i", tmp_path / "l")
    for name in ("i", "l"):
        (tmp_path / f"{name}.gz").write_bytes(gzip.compress((tmp_path / name).read_bytes()))
    ds = load_data(f"idx:{tmp_path / 'i.gz'},{tmp_path / 'l.gz'}")
    assert len(ds) == 3


def test_idx_errors(tmp_path):
    write_idx(np.zeros((3, 28, 28)), np.arange(3), tmp_path / "i", tmp_path / "l")
    with pytest.raises(DatasetError, match="magic"):
        load_idx(tmp_path / "l", tmp_path / "i")
    (tmp_path / "t").write_bytes((tmp_path / "i").read_bytes()[:-5])
    with pytest.raises(DatasetError):
        load_idx(tmp_path / "t", tmp_path / "l")
    write_idx(np.zeros((2, 28, 28)), np.arange(2), tmp_path / "i2", tmp_path / "l2")
    with pytest.raises(DatasetError, match="labels"):
        load_idx(tmp_path / "i", tmp_path / "l2")
    with pytest.raises(DatasetError):
        load_data("idx:onlyone")


@pytest.mark.skipif(not os.environ.get("MNIST_TEST_IDX"), reason="MNIST_TEST_IDX not set")
def test_mnist_test_file_count():
    ds = load_data(os.environ["MNIST_TEST_IDX"])
    assert len(ds) == 10_000


# ------------------------------------------------------------------ splitting

def test_split_counts_per_class():
    ds = stratified_split(toy_dataset(6), 4, seed=1)
    np.testing.assert_array_equal(ds.class_counts(ds.train_idx), [4] * 10)
    np.testing.assert_array_equal(ds.class_counts(ds.test_idx), [2] * 10)


def test_split_with_test_cap():
    ds = stratified_split(toy_dataset(6), 3, seed=1, per_class_test=2)
    np.testing.assert_array_equal(ds.class_counts(ds.test_idx), [2] * 10)
    with pytest.raises(DatasetError):
        stratified_split(toy_dataset(6), 5, seed=1, per_class_test=2)


def test_split_is_seeded():
    a = stratified_split(toy_dataset(), 3, seed=5)
    b = stratified_split(toy_dataset(), 3, seed=5)
    c = stratified_split(toy_dataset(), 3, seed=6)
    np.testing.assert_array_equal(a.train_idx, b.train_idx)
    assert not np.array_equal(a.train_idx, c.train_idx)


def test_split_insufficient_samples():
    with pytest.raises(DatasetError):
        stratified_split(toy_dataset(3), 4, seed=1)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1), st.integers(0, 4))
@settings(max_examples=40, deadline=None)
def test_split_is_a_partition(per_class_train, seed, extra):
    ds = stratified_split(toy_dataset(per_class_train + extra), per_class_train, seed)
    both = np.concatenate([ds.train_idx, ds.test_idx])
    np.testing.assert_array_equal(np.sort(both), np.arange(len(ds)))
    np.testing.assert_array_equal(ds.class_counts(ds.train_idx), [per_class_train] * 10)


def test_dataset_validation():
    with pytest.raises(DatasetError):
        LabeledDataset(np.zeros((2, 32, 32)), np.zeros(2, int))
    with pytest.raises(DatasetError):
        LabeledDataset(np.zeros((2, 1, 32, 32)), np.array([0, 10]))


# ------------------------------------------------------------------ export

def test_constant_half_rounds_up(tmp_path):
    p = export_pgm(np.full((4, 5), 0.5), tmp_path / "half.pgm")
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n5 4\n255\n")
    assert set(raw[len(b"P5\n5 4\n255\n"):]) == {128}


def test_to_bytes_minmax():
    np.testing.assert_array_equal(to_bytes(np.array([[-2.0, 0.0, 2.0]]), minmax=True), [[0, 128, 255]])
    np.testing.assert_array_equal(to_bytes(np.full((2, 2), 3.0), minmax=True), 0)


@given(arrays(np.float64, (32, 32), elements=st.floats(0, 1)))
@settings(max_examples=25, deadline=None)
def test_pgm_round_trip_within_quantization(tmp_path_factory, img):
    d = tmp_path_factory.mktemp("rt")
    export_pgm(img, d / "x.pgm")
    assert np.max(np.abs(read_pgm(d / "x.pgm") - img)) <= 1 / 255 / 2 + 1e-12


def test_round_trip_through_load_dir(tmp_path):
    img = np.random.default_rng(0).random((32, 32))
    export_pgm(img, tmp_path / "tree" / "5" / "a.pgm")
    ds = load_dir(tmp_path / "tree")
    assert np.max(np.abs(ds.images[0, 0] - img)) <= 1 / 255
    # Pillow reads our PGM the same way
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "tree" / "5" / "a.pgm")),
                                  to_bytes(img))


def test_mosaic_layout():
    tiles = [np.full((3, 2), k / 100) for k in range(100)]
    grid = mosaic(tiles, 10, separator=1.0)
    assert grid.shape == (10 * 3 + 9, 10 * 2 + 9)
    assert grid[3, 0] == 1.0 and grid[0, 2] == 1.0  # separators
    assert grid[4, 3] == 11 / 100  # row 1, column 1
    assert mosaic(tiles[:3], 10).shape == (3, 2 * 3 + 2)


def test_export_tiles(tmp_path):
    tiles = [np.random.default_rng(k).random((5, 5)) for k in range(12)]
    export_tiles(tiles, tmp_path, "unit", columns=4)
    assert len(list(tmp_path.glob("unit_[0-9]*.pgm"))) == 12
    grid = read_pgm(tmp_path / "unit_grid.pgm")
    assert grid.shape == (3 * 5 + 2, 4 * 5 + 3)
    export_grid(tiles, 6, tmp_path / "g.pgm")
    assert read_pgm(tmp_path / "g.pgm").shape == (2 * 5 + 1, 6 * 5 + 5)

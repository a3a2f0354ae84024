import numpy as np
import pandas as pd
import pytest

from skyaug.preprocessing.imageio import (MANIFEST_COLUMNS, downsample_map, extract_rb, load_image_file,
                                          load_map_file, load_split_pairs, read_manifest, save_image_file,
                                          save_map_file, split_dataset, split_from_manifest, synth_dataset,
                                          write_dataset)
from skyaug.utils.errors import DataError


def test_extract_rb_extremes():
    rgb = np.array([[[255, 0, 0], [0, 0, 255], [100, 50, 100], [7, 7, 7]]], dtype=np.uint8)
    np.testing.assert_array_equal(extract_rb(rgb), [[255, 0, 128, 128]])


def test_extract_rb_rejects_grayscale():
    with pytest.raises(ValueError):
        extract_rb(np.zeros((4, 4), dtype=np.uint8))


def test_split_sizes_of_reference_dataset():
    split = split_dataset(115, seed=7)
    assert split.sizes() == (69, 18, 28)


def test_split_is_a_partition_and_deterministic():
    a, b = split_dataset(115, seed=7), split_dataset(115, seed=7)
    assert a == b
    ids = a.train_ids + a.val_ids + a.test_ids
    assert sorted(ids) == list(range(115))
    assert split_dataset(115, seed=8) != a


def test_split_tiny_datasets():
    assert split_dataset(3, seed=0).sizes() == (1, 1, 1)
    assert split_dataset(4, seed=0).sizes() == (2, 1, 1)
    assert split_dataset(10, seed=0).sizes() == (6, 2, 2)
    with pytest.raises(DataError, match="split impossible"):
        split_dataset(2, seed=0)


def test_synthetic_dataset_is_deterministic():
    a, b = synth_dataset(4, 16, seed=3), synth_dataset(4, 16, seed=3)
    for (img_a, map_a), (img_b, map_b) in zip(a, b):
        np.testing.assert_array_equal(img_a, img_b)
        np.testing.assert_array_equal(map_a, map_b)
    img, gt = a[0]
    assert img.dtype == np.uint8 and img.shape == (16, 16)
    assert gt.dtype == bool and gt.any() and not gt.all()


def test_image_and_map_files(tmp_path):
    img = np.arange(48, dtype=np.uint8).reshape(6, 8) * 5
    save_image_file(img, tmp_path / "img.pgm")
    np.testing.assert_array_equal(load_image_file(tmp_path / "img.pgm"), img)

    gt = img > 100
    save_map_file(gt, tmp_path / "map.pgm")
    np.testing.assert_array_equal(load_map_file(tmp_path / "map.pgm"), gt)


def test_sixteen_bit_image_is_rejected(tmp_path):
    path = tmp_path / "deep.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(DataError, match="bit depth"):
        load_image_file(path)


def test_malformed_and_missing_files(tmp_path):
    path = tmp_path / "junk.pgm"
    path.write_bytes(b"not an image")
    with pytest.raises(DataError):
        load_image_file(path)
    with pytest.raises(FileNotFoundError):
        load_image_file(tmp_path / "missing.pgm")


def test_downsample_map_stays_binary():
    gt = np.zeros((64, 64), dtype=bool)
    gt[:, 32:] = True
    small = downsample_map(gt, 16)
    assert small.dtype == bool and small.shape == (16, 16)
    assert small[:, :8].sum() == 0 and small[:, 8:].all()


def test_dataset_manifest(tmp_path):
    pairs = synth_dataset(10, 8, seed=1)
    split = split_dataset(10, seed=2)
    manifest = write_dataset(pairs, split, tmp_path)

    assert list(manifest.columns) == MANIFEST_COLUMNS
    assert (manifest["split"] == "train").sum() == split.sizes()[0]
    assert split_from_manifest(read_manifest(tmp_path / "manifest.csv"), split.seed) == split

    train = load_split_pairs(tmp_path / "manifest.csv", "train")
    for (img, gt), i in zip(train, split.train_ids):
        np.testing.assert_array_equal(img, pairs[i][0])
        np.testing.assert_array_equal(gt, pairs[i][1])


def test_malformed_manifest(tmp_path):
    pd.DataFrame({"image_path": ["a.pgm"], "map_path": ["b.pgm"], "split": ["holdout"]}).to_csv(
        tmp_path / "manifest.csv", index=False)
    with pytest.raises(DataError, match="split"):
        read_manifest(tmp_path / "manifest.csv")

    (tmp_path / "other.csv").write_text("x,y\n1,2\n")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "other.csv")

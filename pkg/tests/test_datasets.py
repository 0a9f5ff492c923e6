"""Synthetic generators and IDX/CSV ingestion."""

import struct

import numpy as np
import pytest

from udlflow.datasets import Dataset, load_csv, load_idx, save_csv, synth
from udlflow.errors import ContractError, FormatError


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, h, w))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, labels.size))
        fh.write(labels.tobytes())


class TestSynth:
    def test_single_component_mixture_centered(self):
        ds = synth("gaussian-mixture", 5000, seed=0, centers=[(0.0, 0.0)])
        se = 0.3 / np.sqrt(5000)
        assert np.all(np.abs(ds.samples.mean(axis=0)) < 3 * se)

    def test_single_row(self):
        assert synth("two-moons", 1, seed=0).samples.shape == (1, 2)

    def test_seed_determinism(self):
        a = synth("rings", 100, seed=42).samples
        b = synth("rings", 100, seed=42).samples
        np.testing.assert_array_equal(a, b)

    def test_unknown_name(self):
        with pytest.raises(ContractError):
            synth("spirals", 10)

    def test_checkerboard_parity(self):
        ds = synth("checkerboard", 500, seed=1)
        parity = (np.floor(ds.samples[:, 0]) + np.floor(ds.samples[:, 1])) % 2
        assert np.all(parity == 0)

    def test_moons_have_balanced_labels(self):
        ds = synth("two-moons", 1000, seed=3)
        assert abs(ds.labels.mean() - 0.5) == 0.0


class TestIdx:
    def test_roundtrip_and_scaling(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, size=(6, 4, 4))
        labels = np.array([0, 1, 0, 2, 0, 1])
        ipath, lpath = tmp_path / "imgs", tmp_path / "labels"
        write_idx_images(ipath, imgs)
        write_idx_labels(lpath, labels)
        ds = load_idx(str(ipath), str(lpath))
        assert ds.samples.shape == (6, 16)
        assert ds.shape == (4, 4, 1)
        np.testing.assert_allclose(ds.samples[0], imgs[0].reshape(-1) / 255.0)

    def test_class_filter(self, tmp_path):
        imgs = np.arange(4 * 9).reshape(4, 3, 3) % 256
        labels = [5, 0, 5, 5]
        ipath, lpath = tmp_path / "i", tmp_path / "l"
        write_idx_images(ipath, imgs)
        write_idx_labels(lpath, labels)
        ds = load_idx(str(ipath), str(lpath), class_filter=5)
        assert ds.n == 3
        empty = load_idx(str(ipath), str(lpath), class_filter=9)
        assert empty.empty and empty.n == 0

    def test_filter_commutes_with_count(self, tmp_path):
        rng = np.random.default_rng(1)
        imgs = rng.integers(0, 256, size=(20, 2, 2))
        labels = rng.integers(0, 3, size=20)
        ipath, lpath = tmp_path / "i", tmp_path / "l"
        write_idx_images(ipath, imgs)
        write_idx_labels(lpath, labels)
        ds = load_idx(str(ipath), str(lpath), class_filter=1)
        assert ds.n == int(np.sum(labels == 1))

    def test_mean_pooling_hand_computed(self, tmp_path):
        img = np.zeros((1, 4, 4))
        img[0, :2, :2] = 4      # mean 4
        img[0, :2, 2:] = 8      # mean 8
        img[0, 2:, :2] = [[0, 2], [4, 6]]   # mean 3
        img[0, 2:, 2:] = 255    # mean 255
        ipath = tmp_path / "i"
        write_idx_images(ipath, img)
        ds = load_idx(str(ipath), downsample=2, scale=False)
        np.testing.assert_allclose(ds.samples[0], [4.0, 8.0, 3.0, 255.0])
        assert ds.shape == (2, 2, 1)

    def test_downsample_one_is_identity(self, tmp_path):
        imgs = np.arange(16).reshape(1, 4, 4)
        ipath = tmp_path / "i"
        write_idx_images(ipath, imgs)
        a = load_idx(str(ipath), downsample=1, scale=False)
        b = load_idx(str(ipath), scale=False)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_pooled_shape_28_to_7(self, tmp_path):
        imgs = np.random.default_rng(2).integers(0, 256, size=(2, 28, 28))
        ipath = tmp_path / "i"
        write_idx_images(ipath, imgs)
        ds = load_idx(str(ipath), downsample=4)
        assert ds.shape == (7, 7, 1)
        block = imgs[0, :4, :4].mean() / 255.0
        assert ds.samples[0, 0] == pytest.approx(block)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        with open(path, "wb") as fh:
            fh.write(struct.pack(">II", 0xDEADBEEF, 3))
        with pytest.raises(FormatError):
            load_idx(str(path))

    def test_count_mismatch(self, tmp_path):
        ipath, lpath = tmp_path / "i", tmp_path / "l"
        write_idx_images(ipath, np.zeros((3, 2, 2)))
        write_idx_labels(lpath, [0, 1])
        with pytest.raises(FormatError):
            load_idx(str(ipath), str(lpath))

    def test_ingestion_pure(self, tmp_path):
        imgs = np.random.default_rng(3).integers(0, 256, size=(5, 3, 3))
        ipath = tmp_path / "i"
        write_idx_images(ipath, imgs)
        a = load_idx(str(ipath))
        b = load_idx(str(ipath))
        np.testing.assert_array_equal(a.samples, b.samples)


class TestCsv:
    def test_basic_shape(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1.0,2.0\n3.0,4.0\n5.0,6.0\n")
        ds = load_csv(str(path))
        assert ds.samples.shape == (3, 2)

    def test_header_skipped(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2\n")
        ds = load_csv(str(path), has_header=True)
        assert ds.samples.shape == (1, 2)

    def test_ragged_row_reports_index(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,2\n3,4,5\n")
        with pytest.raises(FormatError, match="row 1"):
            load_csv(str(path))

    def test_non_numeric_reports_index(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,2\n3,oops\n")
        with pytest.raises(FormatError, match="row 1"):
            load_csv(str(path))

    def test_save_load_bit_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        data = rng.normal(size=(20, 3)) * np.array([1e-8, 1.0, 1e8])
        path = tmp_path / "d.csv"
        save_csv(data, str(path))
        back = load_csv(str(path))
        np.testing.assert_array_equal(back.samples, data)


class TestDataset:
    def test_label_length_checked(self):
        with pytest.raises(ContractError):
            Dataset(np.zeros((3, 2)), labels=np.zeros(2))

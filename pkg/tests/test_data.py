"""Synthetic shapes generator and CIFAR-10 binary loader."""

import numpy as np
import pytest

from structssl.data import (PAIR_CLASSES, RECORD_BYTES, SHAPE_NAMES, DataError,
                            Dataset, ShapesSpec, load_cifar10, synth_shapes,
                            write_cifar10_batch)


def boxes_disjoint(b0, b1):
    (r0, c0, r1, c1), (s0, t0, s1, t1) = b0, b1
    return r1 <= s0 or s1 <= r0 or c1 <= t0 or t1 <= c0


class TestDatasetInvariants:
    def test_rejects_label_image_count_mismatch(self):
        with pytest.raises(DataError):
            Dataset(images=np.zeros((3, 4, 4, 3)), labels=np.zeros(2, dtype=np.int64),
                    name="x", num_classes=2)

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(DataError):
            Dataset(images=np.zeros((2, 4, 4, 3)), labels=np.array([0, 5]),
                    name="x", num_classes=2)

    def test_rejects_values_outside_unit_interval(self):
        with pytest.raises(DataError):
            Dataset(images=np.full((1, 4, 4, 3), 1.5), labels=np.zeros(1, dtype=np.int64),
                    name="x", num_classes=1)


class TestSynthShapes:
    def test_fixed_seed_bitwise_identical(self):
        a = synth_shapes(ShapesSpec(seed=3), 32)
        b = synth_shapes(ShapesSpec(seed=3), 32)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_different_seed_differs(self):
        a = synth_shapes(ShapesSpec(seed=3), 8)
        b = synth_shapes(ShapesSpec(seed=4), 8)
        assert not np.array_equal(a.images, b.images)

    def test_shapes_and_ranges(self):
        ds = synth_shapes(ShapesSpec(seed=0), 16)
        assert ds.images.shape == (16, 32, 32, 3)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        assert ds.num_classes == len(PAIR_CLASSES) == 6
        assert ds.labels.min() >= 0 and ds.labels.max() <= 5

    def test_bounding_boxes_disjoint_on_every_image(self):
        ds = synth_shapes(ShapesSpec(seed=1), 200)
        for b0, b1 in ds.metadata["bboxes"]:
            assert boxes_disjoint(b0, b1)

    def test_bounding_boxes_contain_bright_pixels(self):
        ds = synth_shapes(ShapesSpec(seed=2), 20)
        for img, (b0, b1) in zip(ds.images, ds.metadata["bboxes"]):
            for r0, c0, r1, c1 in (b0, b1):
                patch = img[r0:r1, c0:c1]
                assert patch.max() > 0.5

    def test_label_matches_shape_pair(self):
        ds = synth_shapes(ShapesSpec(seed=5), 50)
        for label, kinds in zip(ds.labels, ds.metadata["shape_kinds"]):
            assert PAIR_CLASSES[label] == tuple(sorted(kinds))

    def test_class_histogram_uniform_within_5_percent(self):
        ds = synth_shapes(ShapesSpec(seed=100), 6000)
        counts = np.bincount(ds.labels, minlength=6)
        assert np.all(np.abs(counts / 6000 - 1 / 6) < 0.05)

    def test_placement_failure_is_clean(self):
        spec = ShapesSpec(image_size=16, size_range=(12, 14), seed=0)
        with pytest.raises(DataError, match="place"):
            synth_shapes(spec, 4)

    def test_invalid_spec_rejected(self):
        with pytest.raises(DataError):
            ShapesSpec(size_range=(10, 8))
        with pytest.raises(DataError):
            ShapesSpec(objects=0)

    def test_shape_vocabulary(self):
        assert SHAPE_NAMES == ("square", "circle", "triangle")


class TestCifar10:
    def make_batch(self, tmp_path, n=40, seed=0):
        rng = np.random.default_rng(seed)
        images = rng.integers(0, 256, size=(n, 32, 32, 3)).astype(np.float64) / 255.0
        labels = rng.integers(0, 10, size=n).astype(np.int64)
        path = tmp_path / "data_batch_1.bin"
        write_cifar10_batch(path, images, labels)
        return path, images, labels

    def test_write_then_read_round_trip_bit_exact(self, tmp_path):
        path, images, labels = self.make_batch(tmp_path)
        ds = load_cifar10(tmp_path)
        np.testing.assert_array_equal(ds.images, images)
        np.testing.assert_array_equal(ds.labels, labels)

    def test_record_order_preserved_across_files(self, tmp_path):
        rng = np.random.default_rng(1)
        all_labels = []
        for i in (1, 2):
            labels = rng.integers(0, 10, size=5).astype(np.int64)
            images = rng.random((5, 32, 32, 3))
            images = np.round(images * 255) / 255
            write_cifar10_batch(tmp_path / f"data_batch_{i}.bin", images, labels)
            all_labels.append(labels)
        ds = load_cifar10(tmp_path)
        np.testing.assert_array_equal(ds.labels, np.concatenate(all_labels))

    def test_size_not_multiple_of_record_rejected(self, tmp_path):
        path, _, _ = self.make_batch(tmp_path, n=3)
        blob = path.read_bytes()
        path.write_bytes(blob[:-1])
        with pytest.raises(DataError, match="3073"):
            load_cifar10(tmp_path)

    def test_label_byte_out_of_range_rejected(self, tmp_path):
        path, _, _ = self.make_batch(tmp_path, n=3)
        blob = bytearray(path.read_bytes())
        blob[RECORD_BYTES] = 11
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="label"):
            load_cifar10(tmp_path)

    def test_missing_directory_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_cifar10(tmp_path / "nope")

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(DataError, match="bin"):
            load_cifar10(tmp_path)

    def test_truncation_fuzz_clean_errors(self, tmp_path):
        path, _, _ = self.make_batch(tmp_path, n=2)
        blob = path.read_bytes()
        rng = np.random.default_rng(2)
        for _ in range(30):
            cut = int(rng.integers(1, len(blob)))
            path.write_bytes(blob[:cut])
            if cut % RECORD_BYTES == 0:
                ds = load_cifar10(tmp_path)
                assert len(ds) == cut // RECORD_BYTES
            else:
                with pytest.raises(DataError):
                    load_cifar10(tmp_path)

import numpy as np
import pytest

from amclab import data


def quantized_dataset(n=12, side=9, seed=0):
    """Images on the 1/255 grid so an IDX round trip is bit-exact."""
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, 1, side, side)) / 255.0
    labels = rng.integers(0, 5, size=n)
    return data.Dataset(images, labels)


class TestIdx:
    def test_round_trip_bit_exact(self, tmp_path):
        ds = quantized_dataset()
        ip, lp = tmp_path / "img", tmp_path / "lbl"
        data.write_idx(ds, ip, lp)
        back = data.load_idx(ip, lp)
        assert np.array_equal(ds.images, back.images)
        assert np.array_equal(ds.labels, back.labels)

    def test_bad_image_magic_reports_offset_zero(self, tmp_path):
        ip, lp = tmp_path / "img", tmp_path / "lbl"
        data.write_idx(quantized_dataset(), ip, lp)
        blob = bytearray(ip.read_bytes())
        blob[3] = 0x99
        ip.write_bytes(bytes(blob))
        with pytest.raises(data.IdxError, match="offset 0"):
            data.load_idx(ip, lp)

    def test_truncated_image_payload_rejected(self, tmp_path):
        ip, lp = tmp_path / "img", tmp_path / "lbl"
        data.write_idx(quantized_dataset(), ip, lp)
        blob = ip.read_bytes()
        ip.write_bytes(blob[:-5])
        with pytest.raises(data.IdxError, match="payload"):
            data.load_idx(ip, lp)

    def test_truncated_header_rejected(self, tmp_path):
        ip, lp = tmp_path / "img", tmp_path / "lbl"
        data.write_idx(quantized_dataset(), ip, lp)
        ip.write_bytes(ip.read_bytes()[:10])
        with pytest.raises(data.IdxError):
            data.load_idx(ip, lp)

    def test_label_count_mismatch_rejected(self, tmp_path):
        ds = quantized_dataset()
        ip, lp = tmp_path / "img", tmp_path / "lbl"
        data.write_idx(ds, ip, lp)
        lp2 = tmp_path / "lbl2"
        data.write_idx(quantized_dataset(n=7), tmp_path / "img2", lp2)
        with pytest.raises(data.IdxError, match="does not match"):
            data.load_idx(ip, lp2)


class TestSplit:
    def test_sizes_for_thousand_samples(self):
        ds = quantized_dataset(n=1000, side=8)
        val, att, test = data.split(ds, data.SplitSpec(0.30, 0.30, seed=0))
        assert (len(val), len(att), len(test)) == (300, 210, 490)

    def test_disjoint_and_exhaustive(self):
        # unique pixel values let us track identity through the shuffle
        n = 200
        images = (np.arange(n) / n).reshape(n, 1, 1, 1) * np.ones((n, 1, 2, 2))
        ds = data.Dataset(images, np.zeros(n, int))
        parts = data.split(ds, data.SplitSpec(seed=3))
        seen = np.concatenate([p.images[:, 0, 0, 0] for p in parts])
        assert len(seen) == n
        assert np.array_equal(np.sort(seen), images[:, 0, 0, 0])

    def test_provenance_tags(self):
        parts = data.split(quantized_dataset(n=100), data.SplitSpec(seed=1))
        assert [p.provenance for p in parts] == [
            "validation", "attack_reserve", "test",
        ]

    def test_seed_controls_shuffle(self):
        ds = quantized_dataset(n=100)
        a1, _, _ = data.split(ds, data.SplitSpec(seed=5))
        a2, _, _ = data.split(ds, data.SplitSpec(seed=5))
        b1, _, _ = data.split(ds, data.SplitSpec(seed=6))
        assert np.array_equal(a1.images, a2.images)
        assert not np.array_equal(a1.images, b1.images)

    def test_too_small_partition_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            data.split(quantized_dataset(n=2), data.SplitSpec())

    def test_bad_fraction_rejected(self):
        with pytest.raises(ValueError):
            data.SplitSpec(validation_fraction=1.0)


class TestBalance:
    def test_all_classes_at_min_count(self):
        labels = np.array([0] * 10 + [1] * 4 + [2] * 7)
        ds = data.Dataset(np.zeros((21, 1, 2, 2)), labels)
        out = data.balance_classes(ds, seed=0)
        assert np.array_equal(np.bincount(out.labels), [4, 4, 4])

    def test_missing_class_rejected(self):
        ds = data.Dataset(np.zeros((4, 1, 2, 2)), np.array([0, 0, 2, 2]))
        with pytest.raises(ValueError, match="class 1"):
            data.balance_classes(ds)

    def test_deterministic(self):
        ds = quantized_dataset(n=60)
        a = data.balance_classes(ds, seed=9)
        b = data.balance_classes(ds, seed=9)
        assert np.array_equal(a.images, b.images)


class TestAugment:
    def test_zero_shift_is_identity(self):
        ds = quantized_dataset()
        out = data.augment_shift(ds, 0, seed=0)
        assert np.array_equal(out.images, ds.images)

    def test_interior_content_conserves_mass(self):
        # content 3 pixels away from every border survives a +/-2 shift intact
        images = np.zeros((20, 1, 10, 10))
        images[:, 0, 4:6, 4:6] = 1.0
        ds = data.Dataset(images, np.zeros(20, int))
        out = data.augment_shift(ds, 2, seed=1)
        assert np.allclose(out.images.sum(axis=(1, 2, 3)), 4.0)
        assert out.images.shape == images.shape
        assert np.array_equal(out.labels, ds.labels)

    def test_excessive_shift_rejected(self):
        with pytest.raises(ValueError, match="too large"):
            data.augment_shift(quantized_dataset(side=6), 6, seed=0)

    def test_shifts_actually_move_pixels(self):
        ds = quantized_dataset(n=30)
        out = data.augment_shift(ds, 2, seed=2)
        assert not np.array_equal(out.images, ds.images)


class TestSynth:
    def test_deterministic_and_bounded(self):
        a = data.synth_generate(4, 50, 16, seed=7)
        b = data.synth_generate(4, 50, 16, seed=7)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)
        assert a.images.min() >= 0.0 and a.images.max() <= 1.0
        assert set(np.unique(a.labels)) <= set(range(4))

    def test_all_ten_classes_render_distinct_means(self):
        ds = data.synth_generate(10, 400, 16, seed=3)
        means = np.stack([
            ds.images[ds.labels == c].mean(axis=0).ravel() for c in range(10)
        ])
        for i in range(10):
            for j in range(i + 1, 10):
                assert np.abs(means[i] - means[j]).max() > 0.2

    def test_bad_arguments_rejected(self):
        with pytest.raises(ValueError):
            data.synth_generate(11, 10, 16, seed=0)
        with pytest.raises(ValueError):
            data.synth_generate(4, 10, 4, seed=0)
        with pytest.raises(ValueError):
            data.synth_generate(4, 0, 16, seed=0)

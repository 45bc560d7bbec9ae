"""Spike-train generators and IDX file handling."""

import struct

import numpy as np
import pytest

from lif import SpikeTrain
import spike_data
from spike_data import (IdxBadMagic, IdxCountMismatch, IdxMissingFile,
                        IdxTruncated, LabeledImages, bernoulli_train,
                        class_target_train, decode_spike_count, load_idx,
                        make_rng, rate_encode_image, split_subsets, write_idx)


class TestBernoulliTrain:

    def test_p_zero(self):
        assert bernoulli_train(4, 9, 0.0, make_rng(0)).counts().sum() == 0

    def test_p_one(self):
        assert bernoulli_train(4, 9, 1.0, make_rng(0)).counts().sum() == 36

    def test_toy_input_rate(self):
        total = bernoulli_train(50, 100, 0.1, make_rng(1)).counts().sum()
        assert abs(total - 500) <= 85

    def test_rejects_bad_probability(self):
        with pytest.raises(ValueError):
            bernoulli_train(2, 2, 1.5, make_rng(0))

    def test_same_seed_same_train(self):
        assert bernoulli_train(20, 30, 0.3, make_rng(42)) == \
            bernoulli_train(20, 30, 0.3, make_rng(42))

    def test_neighbouring_seeds_differ(self):
        assert bernoulli_train(20, 30, 0.3, make_rng(42)) != \
            bernoulli_train(20, 30, 0.3, make_rng(43))


class TestRateEncode:

    def test_black_image(self):
        out = rate_encode_image(np.zeros(784, dtype=np.uint8), 30, 0.5,
                                make_rng(0))
        assert out.shape == (784, 30)
        assert out.counts().sum() == 0

    def test_white_pixel_always_fires(self):
        out = rate_encode_image(np.array([255]), 200, 1.0, make_rng(0))
        assert out.counts()[0] == 200

    def test_mid_grey_rate(self):
        pixels = np.full((1000, 1), 128, dtype=np.uint8)
        out = rate_encode_image(pixels, 30, 0.5, make_rng(2))
        assert 7.0 <= out.counts().mean() <= 8.0

    def test_rejects_bad_ceiling(self):
        with pytest.raises(ValueError):
            rate_encode_image(np.zeros(4), 10, 0.0, make_rng(0))


class TestClassTarget:

    def test_regular_spikes(self):
        out = class_target_train(0, 10, 30, 5)
        assert np.flatnonzero(out.data[0]).tolist() == [4, 9, 14, 19, 24, 29]
        assert out.data[1:].sum() == 0

    def test_period_beyond_horizon(self):
        assert class_target_train(3, 10, 4, 5).counts().sum() == 0

    @pytest.mark.parametrize('n_steps,period', [(30, 5), (31, 7), (9, 1)])
    def test_spike_count(self, n_steps, period):
        out = class_target_train(2, 4, n_steps, period)
        assert out.counts()[2] == n_steps // period

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            class_target_train(10, 10, 30, 5)

    def test_batch(self):
        out = spike_data.class_target_batch([1, 3], 4, 10, 5)
        assert out.shape == (2, 4, 10)
        assert out.data[0, 1].sum() == 2
        assert out.data[1, 3].sum() == 2


def _train_with_counts(counts, n_steps=10):
    data = np.zeros((len(counts), n_steps), dtype=np.uint8)
    for i, c in enumerate(counts):
        data[i, :c] = 1
    return SpikeTrain(data)


class TestDecode:

    @pytest.mark.parametrize('counts,expected',
                             [([3, 7, 2], 1), ([5, 5, 1], 0), ([0, 0, 0], 0)])
    def test_argmax(self, counts, expected):
        assert decode_spike_count(_train_with_counts(counts)) == expected

    def test_batch(self):
        batch = np.stack([_train_with_counts([1, 4]).data,
                          _train_with_counts([2, 0]).data])
        np.testing.assert_array_equal(decode_spike_count(batch), [1, 0])


@pytest.fixture
def idx_pair(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(5, 4 * 3), dtype=np.uint8)
    labels = np.array([3, 1, 4, 1, 5], dtype=np.uint8)
    images_path = str(tmp_path / 'images.idx')
    labels_path = str(tmp_path / 'labels.idx')
    write_idx(images_path, labels_path, pixels, labels, rows=4, cols=3)
    return images_path, labels_path, pixels, labels


class TestLoadIdx:

    def test_round_trip(self, idx_pair):
        images_path, labels_path, pixels, labels = idx_pair
        data = load_idx(images_path, labels_path)
        np.testing.assert_array_equal(data.pixels, pixels)
        np.testing.assert_array_equal(data.labels, labels)
        assert len(data) == 5

    def test_missing_file(self, idx_pair, tmp_path):
        _, labels_path, _, _ = idx_pair
        with pytest.raises(IdxMissingFile):
            load_idx(str(tmp_path / 'nope.idx'), labels_path)

    def test_bad_magic(self, idx_pair, tmp_path):
        _, labels_path, _, _ = idx_pair
        bad = tmp_path / 'bad.idx'
        bad.write_bytes(struct.pack('>4I', 0x00000802, 0, 28, 28))
        with pytest.raises(IdxBadMagic):
            load_idx(str(bad), labels_path)

    def test_truncated_payload(self, idx_pair, tmp_path):
        _, labels_path, _, _ = idx_pair
        short = tmp_path / 'short.idx'
        short.write_bytes(struct.pack('>4I', spike_data.IMAGE_MAGIC, 5, 4, 3) +
                          bytes(10))
        with pytest.raises(IdxTruncated):
            load_idx(str(short), labels_path)

    def test_truncated_header(self, idx_pair, tmp_path):
        images_path, _, _, _ = idx_pair
        short = tmp_path / 'short_labels.idx'
        short.write_bytes(struct.pack('>I', spike_data.LABEL_MAGIC))
        with pytest.raises(IdxTruncated):
            load_idx(images_path, str(short))

    def test_count_mismatch(self, idx_pair, tmp_path):
        images_path, _, _, _ = idx_pair
        labels_path = tmp_path / 'four_labels.idx'
        labels_path.write_bytes(struct.pack('>2I', spike_data.LABEL_MAGIC, 4) +
                                bytes([0, 1, 2, 3]))
        with pytest.raises(IdxCountMismatch):
            load_idx(images_path, str(labels_path))


class TestSplitSubsets:

    def _images(self, n):
        pixels = np.arange(n, dtype=np.uint8)[:, None] * np.ones(
            (1, 4), dtype=np.uint8)
        return LabeledImages(pixels, np.arange(n, dtype=np.uint8) % 10)

    def test_disjoint(self):
        train, test = split_subsets(self._images(50), 20, 20, make_rng(0))
        train_ids = set(train.pixels[:, 0].tolist())
        test_ids = set(test.pixels[:, 0].tolist())
        assert len(train_ids) == 20
        assert len(test_ids) == 20
        assert not train_ids & test_ids

    def test_deterministic(self):
        a, _ = split_subsets(self._images(50), 10, 10, make_rng(3))
        b, _ = split_subsets(self._images(50), 10, 10, make_rng(3))
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_too_many(self):
        with pytest.raises(ValueError):
            split_subsets(self._images(10), 6, 6, make_rng(0))

    def test_labels_checked(self):
        with pytest.raises(ValueError):
            LabeledImages(np.zeros((1, 4), dtype=np.uint8),
                          np.array([10], dtype=np.uint8))

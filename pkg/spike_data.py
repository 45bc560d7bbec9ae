# -*- coding: utf-8 -*-
# License: MIT License

"""Spike-train generation and MNIST IDX ingestion.

All randomness comes from an explicit numpy Generator on the PCG64 bit
generator. Trains are drawn as one (n_neurons, n_steps) block of uniforms,
i.e. in row-major order, so a (seed, shape) pair always yields the same
train.
"""

import argparse
from dataclasses import dataclass
import logging
import os
import struct

import numpy as np

from lif import SpikeTrain

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxError(Exception):
    """Base class for IDX parsing problems."""


class IdxMissingFile(IdxError):
    pass


class IdxBadMagic(IdxError):
    pass


class IdxTruncated(IdxError):
    pass


class IdxCountMismatch(IdxError):
    pass


@dataclass(frozen=True)
class LabeledImages:
    """Grayscale images and their digit labels.

    Attributes:
        pixels: ndarray
            uint8, (n_images, rows * cols)
        labels: ndarray
            uint8, (n_images,), values 0-9
    """
    pixels: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.pixels) != len(self.labels):
            raise IdxCountMismatch('%d images but %d labels'
                                   % (len(self.pixels), len(self.labels)))
        if len(self.labels) and int(np.max(self.labels)) >= 10:
            raise ValueError('labels must be < 10')

    def __len__(self):
        return len(self.labels)

    def take(self, indices):
        return LabeledImages(self.pixels[indices], self.labels[indices])


def make_rng(seed):
    """Deterministic 64-bit generator for a seed."""
    return np.random.Generator(np.random.PCG64(seed))


def bernoulli_train(n_neurons, n_steps, p, rng):
    """Every entry spikes independently with probability p."""
    if not 0 <= p <= 1:
        raise ValueError('p must lie in [0, 1], got %r' % p)
    return SpikeTrain(rng.random((n_neurons, n_steps)) < p)


def rate_encode_image(pixels, n_steps, p_max, rng):
    """Rate code: neuron i fires each step with probability
    pixels[i] / 255 * p_max. A (batch, n_pixels) array is encoded in one
    draw."""
    if not 0 < p_max <= 1:
        raise ValueError('p_max must lie in (0, 1], got %r' % p_max)
    probs = np.asarray(pixels, dtype=np.float64) / 255.0 * p_max
    return SpikeTrain(rng.random(probs.shape + (n_steps,)) < probs[..., None])


def class_target_train(class_idx, n_classes, n_steps, period):
    """Regular train on the row of class_idx, spikes at period-1,
    2*period-1, ...; every other row stays silent."""
    if not 0 <= class_idx < n_classes:
        raise ValueError('class %r out of range for %d classes'
                         % (class_idx, n_classes))
    if period < 1:
        raise ValueError('period must be >= 1, got %r' % period)
    data = np.zeros((n_classes, n_steps), dtype=np.uint8)
    data[class_idx, period - 1::period] = 1
    return SpikeTrain(data)


def class_target_batch(labels, n_classes, n_steps, period):
    return SpikeTrain(np.stack([class_target_train(int(c), n_classes, n_steps,
                                                   period).data
                                for c in labels]))


def decode_spike_count(output):
    """Index of the row with most spikes; the lowest index wins ties.

    Works on batches, returning one class per leading index.
    """
    if isinstance(output, SpikeTrain):
        output = output.data
    counts = np.asarray(output).sum(axis=-1)
    return np.argmax(counts, axis=-1)


def _read_header(data, path, n_fields):
    size = 4 * n_fields
    if len(data) < size:
        raise IdxTruncated('%s: header needs %d bytes, file has %d'
                           % (path, size, len(data)))
    return struct.unpack('>%dI' % n_fields, data[:size])


def _read_file(path):
    try:
        with open(path, 'rb') as f:
            return f.read()
    except FileNotFoundError:
        raise IdxMissingFile('%s: no such file' % path) from None


def load_idx(path_images, path_labels):
    """Reads a big-endian IDX image/label file pair.

    Args:
        path_images: string
            image file (magic 0x00000803, count, rows, cols, pixels)
        path_labels: string
            label file (magic 0x00000801, count, labels)

    Returns:
        LabeledImages
    """
    image_data = _read_file(path_images)
    label_data = _read_file(path_labels)

    magic, = _read_header(image_data, path_images, 1)
    if magic != IMAGE_MAGIC:
        raise IdxBadMagic('%s: magic 0x%08x, expected 0x%08x'
                          % (path_images, magic, IMAGE_MAGIC))
    _, count, rows, cols = _read_header(image_data, path_images, 4)
    payload = count * rows * cols
    if len(image_data) - 16 < payload:
        raise IdxTruncated('%s: expected %d pixel bytes, found %d'
                           % (path_images, payload, len(image_data) - 16))
    pixels = np.frombuffer(image_data, dtype=np.uint8, count=payload,
                           offset=16).reshape(count, rows * cols)

    magic, = _read_header(label_data, path_labels, 1)
    if magic != LABEL_MAGIC:
        raise IdxBadMagic('%s: magic 0x%08x, expected 0x%08x'
                          % (path_labels, magic, LABEL_MAGIC))
    _, n_labels = _read_header(label_data, path_labels, 2)
    if len(label_data) - 8 < n_labels:
        raise IdxTruncated('%s: expected %d labels, found %d'
                           % (path_labels, n_labels, len(label_data) - 8))
    labels = np.frombuffer(label_data, dtype=np.uint8, count=n_labels,
                           offset=8)

    if count != n_labels:
        raise IdxCountMismatch('%d images in %s but %d labels in %s'
                               % (count, path_images, n_labels, path_labels))
    logger.info('loaded %d images of %dx%d from %s', count, rows, cols,
                path_images)
    return LabeledImages(pixels.copy(), labels.copy())


def write_idx(path_images, path_labels, pixels, labels, rows=28, cols=28):
    """Writes an IDX image/label pair that load_idx reads back."""
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(-1, rows * cols)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path_images, 'wb') as f:
        f.write(struct.pack('>4I', IMAGE_MAGIC, len(pixels), rows, cols))
        f.write(pixels.tobytes())
    with open(path_labels, 'wb') as f:
        f.write(struct.pack('>2I', LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def split_subsets(images, n_train, n_test, rng):
    """Draws disjoint random train/test subsets.

    Returns:
        (train, test) LabeledImages
    """
    if n_train + n_test > len(images):
        raise ValueError('need %d images, only %d available'
                         % (n_train + n_test, len(images)))
    order = rng.permutation(len(images))
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:n_train + n_test])
    return images.take(train_idx), images.take(test_idx)


def main():
    """ main """
    parser = argparse.ArgumentParser(description='print IDX file summary')
    parser.add_argument('images')
    parser.add_argument('labels')
    args = parser.parse_args()

    for path in (args.images, args.labels):
        if not os.path.isfile(path):
            print('%s: no such file' % path)
            return
    data = load_idx(args.images, args.labels)
    print('%d images, %d pixels each' % data.pixels.shape)
    print('label counts: %s' % np.bincount(data.labels, minlength=10))


if __name__ == '__main__':
    main()

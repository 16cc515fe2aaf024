""" pyRobustStudent data: IDX files, preprocessing, augmentation and toy datasets """

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .constants import (GCN_EPS, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
                        TOY_KINDS, VALIDATION_FRACTION, VALIDATION_SIZE,
                        ZCA_EPS)
from .tensor import Tensor, as_array
from .utils import make_rng

# add a logger for pyRobustStudent.data
logger = logging.getLogger(__name__)


class Dataset:
    """ Labelled image set: N x C x H x W images, class labels and provenance """

    class Error(Exception):
        """ Base exception for Dataset related errors. """
        pass

    class FormatError(Error):
        """ Exception raise on a bad IDX magic number or layout. """
        pass

    class TruncatedError(Error):
        """ Exception raise when a file ends before its declared payload. """
        pass

    class CountMismatchError(Error):
        """ Exception raise when image and label counts differ. """
        pass

    def __init__(self, images, labels, n_classes=None, provenance=None):
        """Constructor.

        :param images: N x C x H x W (or N x H x W, read as one channel)
        :type images: Tensor or array like
        :param labels: N class indices
        :param n_classes: class count (defaults to max label + 1)
        :type n_classes: int
        :param provenance: source and preprocessing steps
        :type provenance: list
        """
        array = as_array(images)
        if array.ndim == 3:
            array = array[:, np.newaxis]
        if array.ndim != 4:
            raise Tensor.ShapeError('images must be N x C x H x W, got %s' % list(array.shape))
        self.images = images if isinstance(images, Tensor) and images.ndim == 4 else Tensor(array)
        self.labels = np.array(labels, dtype=np.int64).reshape(-1)
        self.labels.flags.writeable = False
        if self.labels.size != array.shape[0]:
            raise Dataset.CountMismatchError('%d images for %d labels' % (array.shape[0], self.labels.size))
        self.n_classes = int(n_classes) if n_classes is not None else int(self.labels.max()) + 1
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError('labels out of range (must be in [0, %d))' % self.n_classes)
        self.provenance = list(provenance or [])

    def __repr__(self):
        return 'Dataset(n=%d, shape=%s, classes=%d)' % (len(self), list(self.shape), self.n_classes)

    def __len__(self):
        return self.labels.size

    @property
    def shape(self):
        """Shape of one image (C, H, W)."""
        return self.images.shape[1:]

    def derive(self, images, step, labels=None):
        """New dataset with replaced images and one more provenance step."""
        labels = self.labels if labels is None else labels
        return Dataset(images, labels, self.n_classes, self.provenance + [step])

    def subset(self, indices, step=None):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images.array[indices], self.labels[indices], self.n_classes,
                       self.provenance + [step or 'subset n=%d' % indices.size])

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def batches(self, batch_size, seed=None):
        """Iterate (images, labels) arrays, shuffled when a seed is given."""
        if batch_size < 1:
            raise ValueError('batch_size out of range (must be >= 1)')
        order = np.arange(len(self)) if seed is None else make_rng(seed).permutation(len(self))
        for start in range(0, len(self), batch_size):
            index = order[start:start + batch_size]
            yield self.images.array[index], self.labels[index]

    def manifest(self):
        """Provenance as text (one step per line)."""
        lines = ['n %d' % len(self), 'shape %s' % 'x'.join(str(e) for e in self.shape),
                 'classes %d' % self.n_classes, 'class-counts %s' % ','.join(str(c) for c in self.class_counts())]
        lines.extend('step %s' % step for step in self.provenance)
        return '\n'.join(lines) + '\n'


############
# IDX files
############
def _read_idx(path, magic):
    with open(path, 'rb') as f:
        frame = f.read()
    if len(frame) < 4:
        raise Dataset.TruncatedError('%s: file too short for an IDX header' % path)
    (found,) = struct.unpack('>I', frame[:4])
    if found != magic:
        raise Dataset.FormatError('%s: bad magic 0x%08x (expected 0x%08x)' % (path, found, magic))
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(frame) < head:
        raise Dataset.TruncatedError('%s: file too short for %d dimensions' % (path, ndim))
    dims = struct.unpack('>%dI' % ndim, frame[4:head])
    size = int(np.prod(dims, dtype=np.int64))
    if len(frame) - head < size:
        raise Dataset.TruncatedError('%s: %d payload bytes, %d declared' % (path, len(frame) - head, size))
    return np.frombuffer(frame, dtype=np.uint8, count=size, offset=head).reshape(dims)


def _write_idx(path, array, magic):
    array = np.asarray(array, dtype=np.uint8)
    with open(path, 'wb') as f:
        f.write(struct.pack('>I', magic))
        f.write(struct.pack('>%dI' % array.ndim, *array.shape))
        f.write(array.tobytes())


def load_idx(images_path, labels_path, n_classes=10):
    """Read an IDX image file (N x H x W bytes) and its IDX label file.

    :returns: dataset with pixels scaled to [0, 1]
    :rtype: Dataset
    :raises Dataset.FormatError: bad magic number
    :raises Dataset.TruncatedError: payload shorter than declared
    :raises Dataset.CountMismatchError: image and label counts differ
    """
    pixels = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if pixels.shape[0] != labels.shape[0]:
        raise Dataset.CountMismatchError('%d images in %s for %d labels in %s'
                                         % (pixels.shape[0], images_path, labels.shape[0], labels_path))
    images = pixels.astype(np.float64)[:, np.newaxis] / 255.0
    logger.info('loaded %d images %dx%d from %s', pixels.shape[0], pixels.shape[1], pixels.shape[2], images_path)
    return Dataset(images, labels, n_classes, ['idx %s' % images_path])


def save_idx(dataset, images_path, labels_path):
    """Write a one-channel dataset with pixels in [0, 1] as IDX files."""
    images = dataset.images.array
    if images.shape[1] != 1:
        raise Dataset.FormatError('IDX images hold one channel, dataset has %d' % images.shape[1])
    if images.min() < 0.0 or images.max() > 1.0:
        raise Dataset.FormatError('IDX pixels must be in [0, 1] before writing')
    _write_idx(images_path, np.rint(images[:, 0] * 255.0), IDX_IMAGES_MAGIC)
    _write_idx(labels_path, dataset.labels, IDX_LABELS_MAGIC)


################
# preprocessing
################
def gcn(images, eps=GCN_EPS):
    """Global contrast normalization: zero mean, unit std per image.

    :param eps: std floor
    :type eps: float
    :rtype: Tensor
    """
    array = as_array(images)
    single = array.ndim == 3
    batch = array[np.newaxis] if single else array
    flat = batch.reshape(batch.shape[0], -1)
    centered = flat - flat.mean(axis=1, keepdims=True)
    std = np.maximum(centered.std(axis=1, keepdims=True), eps)
    out = (centered / std).reshape(batch.shape)
    return Tensor._from_owned(out[0] if single else out)


@dataclass
class ZcaTransform:
    """ Fitted ZCA whitening: x -> (x - mean) @ matrix """
    mean: np.ndarray
    matrix: np.ndarray
    eps: float
    rank_deficient: bool = False

    def apply(self, images):
        return zca_apply(self, images)


def zca_fit(images, eps=ZCA_EPS):
    """Fit ZCA whitening on a batch of images.

    matrix = E diag((l + eps)^-1/2) E^T from the eigen decomposition of the
    data covariance.

    :param images: N x ... batch
    :param eps: eigenvalue regularization (>= 0)
    :type eps: float
    :rtype: ZcaTransform
    """
    if eps < 0:
        raise ValueError('eps out of range (must be >= 0)')
    flat = as_array(images).reshape(as_array(images).shape[0], -1)
    n, d = flat.shape
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / n
    values, vectors = np.linalg.eigh(cov)
    values = np.clip(values, 0.0, None)
    rank_deficient = bool(n < d or values.min() <= 1e-10 * max(values.max(), 1e-300))
    if rank_deficient:
        logger.warning('ZCA covariance is rank deficient (n=%d, d=%d, smallest eigenvalue %.3g)',
                       n, d, values.min())
        if eps == 0:
            raise ValueError('singular covariance needs eps > 0')
    matrix = (vectors * (values + eps) ** -0.5) @ vectors.T
    matrix = (matrix + matrix.T) / 2.0
    return ZcaTransform(mean, matrix, float(eps), rank_deficient)


def zca_apply(transform, images):
    """Whiten images with a fitted transform.

    :rtype: Tensor
    """
    array = as_array(images)
    flat = array.reshape(array.shape[0], -1)
    return Tensor._from_owned(((flat - transform.mean) @ transform.matrix).reshape(array.shape))


def augment_flip(batch, seed, return_mask=False):
    """Mirror each image horizontally with probability 1/2.

    :param batch: N x ... x W images
    :param seed: draw seed
    :type seed: int
    :returns: flipped batch (and the flip mask when asked)
    """
    array = np.array(as_array(batch))
    mask = make_rng(seed).random(array.shape[0]) < 0.5
    array[mask] = array[mask][..., ::-1]
    out = Tensor._from_owned(array)
    return (out, mask) if return_mask else out


def pad_to(images, height, width):
    """Centered zero padding to height x width (extra row/column at bottom/right).

    :rtype: Tensor
    """
    array = as_array(images)
    h, w = array.shape[-2], array.shape[-1]
    if height < h or width < w:
        raise ValueError('pad target %dx%d is smaller than %dx%d' % (height, width, h, w))
    top, left = (height - h) // 2, (width - w) // 2
    widths = [(0, 0)] * (array.ndim - 2) + [(top, height - h - top), (left, width - w - left)]
    return Tensor._from_owned(np.pad(array, widths))


def preprocess(dataset, pipeline, zca=None):
    """Apply a named pipeline.

    'none' and 'mnist' keep pixels as loaded; 'cifar' applies GCN then ZCA
    (fitted on this dataset unless a transform is given).

    :returns: (dataset, ZcaTransform or None)
    :rtype: tuple
    """
    if pipeline in ('none', 'mnist'):
        return dataset, zca
    if pipeline != 'cifar':
        raise ValueError('unknown pipeline %r' % pipeline)
    normalized = gcn(dataset.images)
    if zca is None:
        zca = zca_fit(normalized)
    return dataset.derive(zca_apply(zca, normalized), 'gcn+zca eps=%g' % zca.eps), zca


#########
# splits
#########
def split_validation(dataset, size=None):
    """Hold out the last examples: 10000 for full-size sets, 10 % otherwise.

    :returns: (train, validation)
    :rtype: tuple
    """
    n = len(dataset)
    if size is None:
        size = VALIDATION_SIZE if n >= 5 * VALIDATION_SIZE else max(1, int(round(n * VALIDATION_FRACTION)))
    if not 0 < size < n:
        raise ValueError('validation size out of range (must be in (0, %d))' % n)
    return dataset.subset(np.arange(n - size), 'train split'), dataset.subset(np.arange(n - size, n), 'validation split')


def stratified_split(dataset, fraction, seed):
    """Random split keeping class proportions.

    :returns: (kept, held out) with about fraction of every class held out
    :rtype: tuple
    """
    if not 0 < fraction < 1:
        raise ValueError('fraction out of range (must be in (0, 1))')
    rng = make_rng(seed)
    held = []
    for c in range(dataset.n_classes):
        members = np.nonzero(dataset.labels == c)[0]
        count = int(round(members.size * fraction))
        held.extend(rng.permutation(members)[:count].tolist())
    held_mask = np.zeros(len(dataset), dtype=bool)
    held_mask[held] = True
    return (dataset.subset(np.nonzero(~held_mask)[0], 'stratified keep'),
            dataset.subset(np.nonzero(held_mask)[0], 'stratified hold-out'))


###############
# toy datasets
###############
def _blob(size, row, col, sigma):
    grid = np.arange(size, dtype=np.float64)
    return np.exp(-((grid[:, np.newaxis] - row) ** 2 + (grid[np.newaxis, :] - col) ** 2) / (2.0 * sigma ** 2))


def toy_dataset(kind, n, seed, n_classes=None, margin=1.0, size=8):
    """Small synthetic image classification set (1 x size x size images).

    blob-digits: class c is a gaussian blob at the c-th position of a ring
    of k positions, with amplitude margin and pixel noise.
    two-moons-image: a blob drawn at a two-moons sample; margin pulls the
    two moons apart.

    :param kind: 'blob-digits' or 'two-moons-image'
    :param n: example count (>= class count)
    :param seed: generator seed
    :param n_classes: class count (blob-digits only, default 4)
    :param margin: class separation knob
    :rtype: Dataset
    """
    if kind not in TOY_KINDS:
        raise ValueError('unknown toy dataset %r (choose from %s)' % (kind, ', '.join(TOY_KINDS)))
    k = 2 if kind == 'two-moons-image' else int(n_classes or 4)
    if n < k:
        raise ValueError('n out of range (must be >= %d classes)' % k)
    rng = make_rng(seed)
    labels = rng.permutation(np.arange(n) % k)
    images = np.empty((n, 1, size, size))
    middle = (size - 1) / 2.0
    for i, c in enumerate(labels):
        if kind == 'blob-digits':
            angle = 2.0 * np.pi * c / k
            row, col = middle + 0.3 * size * np.sin(angle), middle + 0.3 * size * np.cos(angle)
            image = margin * _blob(size, row, col, 1.2)
        else:
            t = rng.uniform(0.0, np.pi)
            if c == 0:
                u, v = np.cos(t), np.sin(t)
            else:
                u, v = 1.0 - np.cos(t), 1.0 - np.sin(t) - 0.5 * margin
            u, v = u + rng.normal(0.0, 0.1), v + rng.normal(0.0, 0.1)
            row = (1.0 - v) / 2.5 * (size - 1)
            col = (u + 1.0) / 3.0 * (size - 1)
            image = _blob(size, row, col, 1.0)
        images[i, 0] = image + rng.normal(0.0, 0.3, size=(size, size))
    step = 'toy %s n=%d seed=%d margin=%g' % (kind, n, seed, margin)
    return Dataset(images, labels, k, [step])

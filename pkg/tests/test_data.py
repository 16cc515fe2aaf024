""" Test of pyRobustStudent.data """

import os
import struct
import tempfile
import unittest

import numpy as np

from pyRobustStudent.data import Dataset, load_idx, save_idx, gcn, zca_fit, zca_apply, augment_flip, \
    pad_to, preprocess, split_validation, stratified_split, toy_dataset
from pyRobustStudent.tensor import Tensor


class TestIdx(unittest.TestCase):
    """ IDX files test class. """

    def setUp(self):
        """Write a 10 image 4x4 fixture."""
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = self._tmp.name
        self.pixels = (np.arange(160) * 7 % 256).astype(np.uint8).reshape(10, 4, 4)
        self.labels = np.array([0, 1, 2, 3, 4, 5, 6, 7, 8, 9], dtype=np.uint8)
        self.images_path = self._write('images.idx', struct.pack('>IIII', 0x803, 10, 4, 4) + self.pixels.tobytes())
        self.labels_path = self._write('labels.idx', struct.pack('>II', 0x801, 10) + self.labels.tobytes())

    def tearDown(self):
        """Remove the fixture files."""
        self._tmp.cleanup()

    def _write(self, name, frame):
        path = os.path.join(self.dir, name)
        with open(path, 'wb') as f:
            f.write(frame)
        return path

    def test_load(self):
        """Pixels are bytes / 255 and labels are kept."""
        dataset = load_idx(self.images_path, self.labels_path)
        self.assertEqual(len(dataset), 10)
        self.assertEqual(dataset.shape, (1, 4, 4))
        self.assertEqual(dataset.n_classes, 10)
        self.assertEqual(dataset.images.array[0, 0, 0, 0], self.pixels[0, 0, 0] / 255.0)
        self.assertEqual(dataset.images.array[3, 0, 1, 2], self.pixels[3, 1, 2] / 255.0)
        self.assertEqual(dataset.labels.tolist(), list(range(10)))
        self.assertIn('idx', dataset.manifest())

    def test_round_trip(self):
        """Saved files are byte-identical to the loaded ones."""
        dataset = load_idx(self.images_path, self.labels_path)
        images_out = os.path.join(self.dir, 'out-images.idx')
        labels_out = os.path.join(self.dir, 'out-labels.idx')
        save_idx(dataset, images_out, labels_out)
        for src, dst in ((self.images_path, images_out), (self.labels_path, labels_out)):
            with open(src, 'rb') as a, open(dst, 'rb') as b:
                self.assertEqual(a.read(), b.read())
        # only one-channel [0, 1] images can be written
        colour = Dataset(np.zeros((2, 3, 4, 4)), [0, 1])
        self.assertRaises(Dataset.FormatError, save_idx, colour, images_out, labels_out)
        bright = Dataset(np.full((2, 1, 4, 4), 1.5), [0, 1])
        self.assertRaises(Dataset.FormatError, save_idx, bright, images_out, labels_out)

    def test_errors(self):
        """Bad magic, truncation and count mismatch."""
        self.assertRaises(Dataset.FormatError, load_idx, self.labels_path, self.labels_path)
        with open(self.images_path, 'rb') as f:
            frame = f.read()
        short = self._write('short.idx', frame[:-1])
        self.assertRaises(Dataset.TruncatedError, load_idx, short, self.labels_path)
        header = self._write('header.idx', frame[:6])
        self.assertRaises(Dataset.TruncatedError, load_idx, header, self.labels_path)
        nine = self._write('nine.idx', struct.pack('>II', 0x801, 9) + self.labels[:9].tobytes())
        self.assertRaises(Dataset.CountMismatchError, load_idx, self.images_path, nine)
        self.assertRaises(Dataset.Error, load_idx, self.images_path, nine)


class TestPreprocessing(unittest.TestCase):
    """ GCN, ZCA, flips and padding test class. """

    def test_gcn(self):
        """Per image zero mean and unit std."""
        self.assertEqual(gcn(np.full((1, 1, 3, 3), 0.7)).array.tolist(), np.zeros((1, 1, 3, 3)).tolist())
        self.assertTrue(np.allclose(gcn(np.array([[[0.0, 2.0]]])).array, [[[-1.0, 1.0]]]))
        batch = np.random.default_rng(0).uniform(size=(20, 3, 5, 5)) * 4.0 + 2.0
        out = gcn(batch).array.reshape(20, -1)
        self.assertLess(np.max(np.abs(out.mean(axis=1))), 1e-10)
        self.assertLess(np.max(np.abs(out.std(axis=1) - 1.0)), 1e-10)

    def test_zca_closed_forms(self):
        """White data keeps an identity matrix; diag(4, 1) gives diag(1/2, 1)."""
        data = np.array([[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]]) * np.array([np.sqrt(2.0), np.sqrt(2.0)])
        transform = zca_fit(data, eps=0.0)
        self.assertTrue(np.allclose(transform.matrix, np.diag([0.5, 1.0]), atol=1e-12))
        self.assertFalse(transform.rank_deficient)
        white = np.random.default_rng(1).standard_normal((20000, 4))
        transform = zca_fit(white, eps=1e-6)
        self.assertTrue(np.allclose(transform.matrix, np.eye(4), atol=0.05))
        self.assertTrue(np.array_equal(transform.matrix, transform.matrix.T))

    def test_zca_whitens(self):
        """Whitened fitting set has a near identity covariance."""
        rng = np.random.default_rng(2)
        q, _ = np.linalg.qr(rng.normal(size=(16, 16)))
        data = rng.standard_normal((500, 16)) @ np.diag(np.linspace(1.0, 3.0, 16)) @ q + 5.0
        transform = zca_fit(data)
        out = zca_apply(transform, data).array
        centered = out - out.mean(axis=0)
        cov = centered.T @ centered / 500
        self.assertLess(np.max(np.abs(cov - np.eye(16))), 0.1)
        self.assertTrue(np.allclose(transform.apply(data).array, out))
        # images keep their shape
        images = rng.normal(size=(30, 1, 2, 2))
        self.assertEqual(zca_apply(zca_fit(images), images).shape, (30, 1, 2, 2))

    def test_zca_rank_deficient(self):
        """Fewer samples than dimensions is flagged, and refused without eps."""
        data = np.random.default_rng(3).normal(size=(3, 8))
        with self.assertLogs('pyRobustStudent.data', level='WARNING'):
            self.assertTrue(zca_fit(data).rank_deficient)
        with self.assertLogs('pyRobustStudent.data', level='WARNING'):
            self.assertRaises(ValueError, zca_fit, data, 0.0)
        self.assertRaises(ValueError, zca_fit, data, -1.0)

    def test_flip(self):
        """Mirror with probability one half."""
        batch = np.tile([[[[1.0, 2.0]]]], (200, 1, 1, 1))
        out, mask = augment_flip(batch, seed=4, return_mask=True)
        for image, flipped in zip(out.array, mask):
            self.assertEqual(image[0, 0].tolist(), [2.0, 1.0] if flipped else [1.0, 2.0])
        self.assertTrue(np.array_equal(out.array, augment_flip(batch, seed=4).array))
        symmetric = np.tile([[[[1.0, 3.0, 1.0]]]], (10, 1, 1, 1))
        self.assertTrue(np.array_equal(augment_flip(symmetric, seed=5).array, symmetric))
        _, mask = augment_flip(np.zeros((10000, 1, 1, 2)), seed=6, return_mask=True)
        self.assertAlmostEqual(float(mask.mean()), 0.5, delta=0.02)

    def test_pad_to(self):
        """Centered zero padding."""
        images = np.ones((2, 1, 16, 16))
        out = pad_to(images, 28, 28).array
        self.assertEqual(out.shape, (2, 1, 28, 28))
        self.assertEqual(out[0, 0, 6:22, 6:22].min(), 1.0)
        self.assertEqual(out.sum(), images.sum())
        self.assertTrue(np.array_equal(pad_to(images, 16, 16).array, images))
        out = pad_to(np.ones((1, 1, 1, 1)), 3, 3).array
        self.assertEqual(out[0, 0, 1, 1], 1.0)
        self.assertEqual(out.sum(), 1.0)
        # odd remainder goes to the bottom/right
        out = pad_to(np.ones((1, 1, 1, 1)), 2, 2).array
        self.assertEqual(out[0, 0, 0, 0], 1.0)
        self.assertRaises(ValueError, pad_to, images, 8, 28)

    def test_preprocess(self):
        """Named pipelines."""
        dataset = toy_dataset('blob-digits', 40, seed=0)
        same, zca = preprocess(dataset, 'mnist')
        self.assertIs(same, dataset)
        self.assertIsNone(zca)
        white, zca = preprocess(dataset, 'cifar')
        self.assertIsNotNone(zca)
        self.assertEqual(white.shape, dataset.shape)
        self.assertTrue(white.provenance[-1].startswith('gcn+zca'))
        # a fitted transform is reused as it is
        other, again = preprocess(toy_dataset('blob-digits', 12, seed=1), 'cifar', zca)
        self.assertIs(again, zca)
        self.assertRaises(ValueError, preprocess, dataset, 'jpeg')


class TestDatasets(unittest.TestCase):
    """ Dataset container, splits and toy sets test class. """

    def test_container(self):
        """Shapes, labels and batches."""
        dataset = Dataset(np.zeros((6, 3, 3)), [0, 1, 2, 0, 1, 2], provenance=['zeros'])
        self.assertEqual(dataset.shape, (1, 3, 3))
        self.assertEqual(dataset.n_classes, 3)
        self.assertEqual(dataset.class_counts().tolist(), [2, 2, 2])
        self.assertRaises(Dataset.CountMismatchError, Dataset, np.zeros((6, 3, 3)), [0, 1])
        self.assertRaises(ValueError, Dataset, np.zeros((2, 3, 3)), [0, 3], 3)
        self.assertRaises(Tensor.ShapeError, Dataset, np.zeros((6, 3)), [0] * 6)
        sizes = [len(y) for _, y in dataset.batches(4)]
        self.assertEqual(sizes, [4, 2])
        seen = np.concatenate([y for _, y in dataset.batches(4, seed=1)])
        self.assertEqual(sorted(seen.tolist()), sorted(dataset.labels.tolist()))
        self.assertRaises(ValueError, list, dataset.batches(0))
        self.assertIn('step zeros', dataset.manifest())
        self.assertEqual(len(dataset.subset([0, 2])), 2)

    def test_splits(self):
        """Last examples for validation, class proportions for stratified splits."""
        dataset = toy_dataset('blob-digits', 100, seed=0)
        train, validation = split_validation(dataset)
        self.assertEqual((len(train), len(validation)), (90, 10))
        self.assertEqual(validation.labels.tolist(), dataset.labels[90:].tolist())
        train, validation = split_validation(dataset, 25)
        self.assertEqual(len(validation), 25)
        self.assertRaises(ValueError, split_validation, dataset, 100)
        kept, held = stratified_split(dataset, 0.2, seed=3)
        self.assertEqual(len(kept) + len(held), 100)
        self.assertEqual(held.class_counts().tolist(), [5, 5, 5, 5])
        self.assertRaises(ValueError, stratified_split, dataset, 1.0, 0)

    def test_toy(self):
        """Reproducible balanced toy sets."""
        a = toy_dataset('blob-digits', 100, seed=7)
        b = toy_dataset('blob-digits', 100, seed=7)
        self.assertTrue(np.array_equal(a.images.array, b.images.array))
        self.assertTrue(np.array_equal(a.labels, b.labels))
        self.assertEqual(a.shape, (1, 8, 8))
        counts = a.class_counts()
        self.assertLessEqual(counts.max() - counts.min(), 1)
        moons = toy_dataset('two-moons-image', 101, seed=7)
        self.assertEqual(moons.n_classes, 2)
        self.assertLessEqual(abs(int(moons.class_counts()[0]) - int(moons.class_counts()[1])), 1)
        self.assertEqual(toy_dataset('blob-digits', 30, seed=1, n_classes=6).n_classes, 6)
        self.assertRaises(ValueError, toy_dataset, 'blob-digits', 3, 0)
        self.assertRaises(ValueError, toy_dataset, 'spirals', 10, 0)

    def test_linear_separable(self):
        """A least-squares linear classifier separates blob digits."""
        dataset = toy_dataset('blob-digits', 1000, seed=2, margin=1.0)
        x = np.hstack([dataset.images.array.reshape(1000, -1), np.ones((1000, 1))])
        targets = np.eye(4)[dataset.labels]
        weights, *_ = np.linalg.lstsq(x[:800], targets[:800], rcond=None)
        accuracy = np.mean(np.argmax(x[800:] @ weights, axis=1) == dataset.labels[800:])
        self.assertGreaterEqual(accuracy, 0.95)


if __name__ == '__main__':
    unittest.main()

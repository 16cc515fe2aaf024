""" Test of pyRobustStudent.tensor """

import unittest

import numpy as np

from pyRobustStudent.tensor import Tensor, as_array, matmul, pad2d, conv2d, max_pool, reduce


class TestTensor(unittest.TestCase):
    """ Tensor storage and kernels test class. """

    def test_build(self):
        """Build tensors from nested lists, flat data and arrays."""
        t = Tensor([[1, 2], [3, 4]])
        self.assertEqual(t.shape, (2, 2))
        self.assertEqual(t.size, 4)
        self.assertEqual(len(t), 2)
        self.assertEqual(t.tolist(), [[1.0, 2.0], [3.0, 4.0]])
        # flat data plus a shape
        t = Tensor(range(6), shape=(2, 3))
        self.assertEqual(t.shape, (2, 3))
        self.assertEqual(t.data.tolist(), [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
        self.assertRaises(Tensor.ShapeError, Tensor, range(5), (2, 3))
        # zero extents are refused
        self.assertRaises(Tensor.ShapeError, Tensor, [])
        self.assertEqual(Tensor.zeros((2, 3)).array.sum(), 0.0)
        self.assertEqual(Tensor.ones((2, 3)).array.sum(), 6.0)
        self.assertEqual(Tensor([7.5]).item(), 7.5)
        self.assertRaises(Tensor.ShapeError, Tensor([1, 2]).item)

    def test_finite_and_read_only(self):
        """Non-finite values are refused and storage is read-only."""
        self.assertRaises(Tensor.NonFiniteError, Tensor, [1.0, float('nan')])
        self.assertRaises(Tensor.NonFiniteError, Tensor, [float('inf')])
        self.assertRaises(Tensor.NonFiniteError, as_array, np.array([np.nan]))
        t = Tensor([1.0, 2.0])
        with self.assertRaises(ValueError):
            t.array[0] = 5.0
        # a source array stays writable and independent
        source = np.array([1.0, 2.0])
        t = Tensor.from_array(source)
        source[0] = 9.0
        self.assertEqual(t.array[0], 1.0)

    def test_reshape(self):
        """Reshape keeps the data in row-major order."""
        t = Tensor(range(6), shape=(2, 3)).reshape((3, 2))
        self.assertEqual(t.tolist(), [[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
        self.assertRaises(Tensor.ShapeError, t.reshape, (4, 2))

    def test_matmul(self):
        """Matrix product and shape checks."""
        out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5], [6]]))
        self.assertEqual(out.tolist(), [[17.0], [39.0]])
        self.assertRaises(Tensor.ShapeError, matmul, Tensor([[1, 2]]), Tensor([[1, 2]]))
        self.assertRaises(Tensor.ShapeError, matmul, Tensor([1, 2]), Tensor([[1], [2]]))

    def test_conv2d(self):
        """Cross-correlation of single images and batches."""
        image = Tensor.ones((1, 3, 3))
        kernels = Tensor.ones((1, 1, 3, 3))
        bias = Tensor([0.0])
        # all ones 3x3 kernel over all ones 3x3 image
        out = conv2d(image, kernels, bias)
        self.assertEqual(out.shape, (1, 1, 1))
        self.assertEqual(out.item(), 9.0)
        # bias is added per output channel
        self.assertEqual(conv2d(image, kernels, Tensor([0.5])).item(), 9.5)
        # with one row/col of padding: center 9, corners 4, edges 6
        out = conv2d(image, kernels, bias, padding=1)
        self.assertEqual(out.shape, (1, 3, 3))
        self.assertEqual(out.array[0, 1, 1], 9.0)
        self.assertEqual(out.array[0, 0, 0], 4.0)
        self.assertEqual(out.array[0, 0, 1], 6.0)
        # cross-correlation, not convolution: kernel is not flipped
        image = Tensor(range(4), shape=(1, 2, 2))
        kernel = Tensor([1.0, 0.0, 0.0, 0.0], shape=(1, 1, 2, 2))
        self.assertEqual(conv2d(image, kernel, bias).item(), 0.0)
        # batch form, two output channels
        batch = Tensor(np.random.default_rng(0).normal(size=(4, 2, 5, 5)))
        kernels = Tensor(np.random.default_rng(1).normal(size=(3, 2, 3, 3)))
        out = conv2d(batch, kernels, Tensor([0.0, 1.0, 2.0]))
        self.assertEqual(out.shape, (4, 3, 3, 3))
        single = conv2d(Tensor(batch.array[2]), kernels, Tensor([0.0, 1.0, 2.0]))
        self.assertTrue(np.allclose(out.array[2], single.array))
        # a direct sum for one output cell
        direct = np.sum(batch.array[1, :, 1:4, 0:3] * kernels.array[2]) + 2.0
        self.assertAlmostEqual(out.array[1, 2, 1, 0], direct)
        # mismatches
        self.assertRaises(Tensor.ShapeError, conv2d, Tensor.ones((1, 2, 2)), Tensor.ones((1, 1, 3, 3)), bias)
        self.assertRaises(Tensor.ShapeError, conv2d, Tensor.ones((2, 3, 3)), Tensor.ones((1, 1, 3, 3)), bias)
        self.assertRaises(Tensor.ShapeError, conv2d, image, kernel, Tensor([0.0, 0.0]))

    def test_max_pool(self):
        """Max pooling values and argmax indices."""
        out, index = max_pool(Tensor([[[1, 2], [3, 4]]]), (2, 2))
        self.assertEqual(out.shape, (1, 1, 1))
        self.assertEqual(out.item(), 4.0)
        self.assertEqual(int(index.reshape(-1)[0]), 3)
        # ties go to the lowest flat index
        out, index = max_pool(Tensor.ones((1, 2, 2)), (2, 2))
        self.assertEqual(int(index.reshape(-1)[0]), 0)
        # 4x4 map with 2x2 windows
        x = Tensor(range(16), shape=(1, 4, 4))
        out, _ = max_pool(x, (2, 2))
        self.assertEqual(out.tolist(), [[[5.0, 7.0], [13.0, 15.0]]])
        # overlapping windows with stride 1
        out, _ = max_pool(x, (2, 2), (1, 1))
        self.assertEqual(out.shape, (1, 3, 3))
        # batch indexes point into the whole batch
        batch = Tensor(np.stack([x.array, -x.array]))
        out, index = max_pool(batch, (2, 2))
        self.assertEqual(out.shape, (2, 1, 2, 2))
        self.assertTrue(np.array_equal(batch.data[index], out.array))
        self.assertRaises(Tensor.ShapeError, max_pool, Tensor.ones((1, 2, 2)), (3, 3))

    def test_pad2d(self):
        """Zero padding of the trailing axes."""
        out = pad2d(Tensor([[[1.0]]]), 1)
        self.assertEqual(out.shape, (1, 3, 3))
        self.assertEqual(out.array[0, 1, 1], 1.0)
        self.assertEqual(out.array.sum(), 1.0)
        self.assertEqual(pad2d(Tensor([[1.0]]), 0).shape, (1, 1))
        self.assertRaises(ValueError, pad2d, Tensor([[1.0]]), -1)

    def test_reduce(self):
        """Sum, mean and max reductions."""
        x = Tensor([[1, 5], [3, 2]])
        self.assertEqual(reduce(x, 'sum').item(), 11.0)
        self.assertEqual(reduce(x, 'sum', 0).tolist(), [4.0, 7.0])
        self.assertEqual(reduce(x, 'max', 1).tolist(), [5.0, 3.0])
        self.assertEqual(reduce(x, 'mean', -1).tolist(), [3.0, 2.5])
        self.assertRaises(Tensor.AxisError, reduce, x, 'sum', 2)
        self.assertRaises(ValueError, reduce, x, 'median')


if __name__ == '__main__':
    unittest.main()

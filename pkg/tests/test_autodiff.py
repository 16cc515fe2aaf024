""" Test of pyRobustStudent.autodiff """

import math
import unittest

import numpy as np

from pyRobustStudent.autodiff import Tape, add, mul, exp, log, matmul, reduce_sum, reduce_max, \
    square, relu, log_softmax, softmax, conv2d, max_pool, dense, take, \
    finite_difference, gradient_check, grad_of_grad_check
from pyRobustStudent.tensor import Tensor


class TestTape(unittest.TestCase):
    """ Tape recording and backward test class. """

    def test_square_gradient(self):
        """Gradient of sum(x * x) is 2x."""
        tape = Tape()
        x = tape.leaf([1.0, -2.0, 3.0])
        y = tape.forward(lambda a: reduce_sum(a * a), x)
        self.assertEqual(y.item(), 14.0)
        grads = tape.backward(y, [x])
        self.assertEqual(grads[x].array.tolist(), [2.0, -4.0, 6.0])
        # without create_graph gradients are plain detached values
        self.assertTrue(grads[x].detached)

    def test_shared_subexpression(self):
        """Gradients of a reused node accumulate."""
        tape = Tape()
        x = tape.leaf([2.0])
        y = x * x
        z = reduce_sum(y * y + y)
        # z = x^4 + x^2, dz/dx = 4x^3 + 2x
        self.assertAlmostEqual(tape.backward(z, [x])[x].item(), 36.0)

    def test_softmax(self):
        """Softmax of [ln 2, 0] is [2/3, 1/3]."""
        tape = Tape()
        out = softmax(tape.leaf([math.log(2.0), 0.0]))
        self.assertTrue(np.allclose(out.array, [2.0 / 3.0, 1.0 / 3.0]))
        # log_softmax of a large logit stays finite
        out = log_softmax(tape.leaf([[1000.0, 0.0]]))
        self.assertAlmostEqual(out.array[0, 0], 0.0)
        self.assertAlmostEqual(out.array[0, 1], -1000.0)

    def test_errors(self):
        """Non-scalar roots, foreign nodes and bad logs are refused."""
        tape = Tape()
        x = tape.leaf([1.0, 2.0])
        self.assertRaises(Tape.NotScalarError, tape.backward, x * 2.0, [x])
        other = Tape()
        z = other.leaf([1.0])
        self.assertRaises(Tape.DetachedError, tape.backward, reduce_sum(x), [z])
        self.assertRaises(Tape.DetachedError, add, x, z)
        self.assertRaises(Tape.DetachedError, tape.root, 'missing')
        self.assertRaises(ValueError, log, tape.leaf([0.0, 1.0]))

    def test_unreached_leaf(self):
        """A leaf that does not reach the root gets a zero gradient."""
        tape = Tape()
        x = tape.leaf([1.0, 2.0])
        w = tape.leaf([[1.0, 2.0], [3.0, 4.0]], name='w')
        y = reduce_sum(exp(x))
        grads = tape.backward(y, [x, w])
        self.assertTrue(np.allclose(grads[x].array, np.exp([1.0, 2.0])))
        self.assertEqual(grads[w].shape, (2, 2))
        self.assertEqual(grads[w].array.sum(), 0.0)
        self.assertIs(tape.root('w'), w)

    def test_no_record(self):
        """Operations under no_record compute values without nodes."""
        tape = Tape()
        x = tape.leaf([1.0, 2.0])
        before = len(tape)
        with tape.no_record():
            y = reduce_sum(x * x)
        self.assertEqual(y.item(), 5.0)
        self.assertEqual(len(tape), before)
        self.assertTrue(y.detached)
        self.assertTrue(tape.recording)

    def test_replay(self):
        """Replaying a tape reproduces every stored value."""
        tape = Tape()
        rng = np.random.default_rng(3)
        x = tape.leaf(rng.normal(size=(4, 3)))
        w = tape.leaf(rng.normal(size=(2, 3)))
        b = tape.leaf(rng.normal(size=(2,)))
        y = reduce_sum(log_softmax(relu(dense(x, w, b))))
        tape.backward(y, [w, b], create_graph=True)
        self.assertLess(tape.replay(), 1e-12)

    def test_reduce_max(self):
        """Max gradient flows to the first maximum only."""
        tape = Tape()
        x = tape.leaf([[1.0, 3.0, 3.0], [2.0, 0.0, 1.0]])
        m = reduce_max(x, axis=1)
        self.assertEqual(m.array.tolist(), [3.0, 2.0])
        g = tape.backward(reduce_sum(m), [x])[x]
        self.assertEqual(g.array.tolist(), [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        # take and its scatter gradient
        t = take(x, np.array([0, 0, 5]))
        g = tape.backward(reduce_sum(t), [x])[x]
        self.assertEqual(g.array.tolist(), [[2.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


class TestGradientChecks(unittest.TestCase):
    """ Backward against finite differences test class. """

    def setUp(self):
        """Shared random generator."""
        self.rng = np.random.default_rng(7)

    def test_finite_difference(self):
        """Central differences of a quadratic are exact up to rounding."""
        grad = finite_difference(lambda v: float(np.sum(v ** 2)), np.array([1.0, -3.0]))
        self.assertTrue(np.allclose(grad, [2.0, -6.0], atol=1e-6))

    def test_elementwise(self):
        """Check mul, div, exp, log and softmax compositions."""
        def fn(a, b):
            return reduce_sum(log(exp(a) + square(b)) * softmax(a / (square(b) + 1.0)))

        report = gradient_check(fn, self.rng.normal(size=5), self.rng.normal(size=5))
        self.assertTrue(report.passed, report.relative_error)

    def test_matmul_dense(self):
        """Check matmul and dense against finite differences."""
        report = gradient_check(lambda x, w, b: reduce_sum(square(dense(x, w, b))),
                                self.rng.normal(size=(4, 3)), self.rng.normal(size=(2, 3)),
                                self.rng.normal(size=2))
        self.assertTrue(report.passed, report.relative_error)
        report = gradient_check(lambda a, b: reduce_sum(square(matmul(a, b))),
                                self.rng.normal(size=(2, 3)), self.rng.normal(size=(3, 4)))
        self.assertTrue(report.passed, report.relative_error)

    def test_conv_pool(self):
        """Check conv2d with padding followed by max pooling."""
        def fn(x, k, b):
            return reduce_sum(square(max_pool(conv2d(x, k, b, padding=1), (2, 2))))

        report = gradient_check(fn, self.rng.normal(size=(2, 2, 4, 4)),
                                self.rng.normal(size=(3, 2, 3, 3)), self.rng.normal(size=3))
        self.assertTrue(report.passed, report.relative_error)
        self.assertEqual(len(report.analytic), 3)
        self.assertEqual(report.analytic[1].shape, (3, 2, 3, 3))

    def test_log_softmax_cross_entropy(self):
        """Check a cross entropy built from log_softmax and take."""
        labels = np.array([1, 0, 2])

        def fn(z):
            picked = take(log_softmax(z), np.arange(3) * 3 + labels)
            return -reduce_sum(picked) / 3.0

        report = gradient_check(fn, self.rng.normal(size=(3, 3)))
        self.assertTrue(report.passed, report.relative_error)

    def test_grad_of_grad_bilinear(self):
        """d/dtheta ||d(x.theta)/dx||^2 is 2 theta."""
        theta = np.array([0.5, -1.0, 2.0])
        report = grad_of_grad_check(lambda x, t: reduce_sum(mul(x, t)), np.array([1.0, 2.0, 3.0]), theta)
        self.assertTrue(report.passed, report.relative_error)
        self.assertTrue(np.allclose(report.analytic[0], 2.0 * theta))

    def test_grad_of_grad_network(self):
        """Double backward through a small conv layer."""
        x = self.rng.normal(size=(1, 1, 4, 4))
        theta = self.rng.normal(size=(2, 1, 3, 3))

        def f(x_node, t_node):
            h = conv2d(x_node, t_node, Tensor([0.1, -0.2]))
            return reduce_sum(log_softmax(h.reshape(1, 8)) * 0.5) + reduce_sum(square(h)) * 0.1

        report = grad_of_grad_check(f, x, theta)
        self.assertTrue(report.passed, report.relative_error)


if __name__ == '__main__':
    unittest.main()

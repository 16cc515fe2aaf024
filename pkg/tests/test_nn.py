""" Test of pyRobustStudent.nn """

import os
import tempfile
import unittest

import numpy as np

from pyRobustStudent.autodiff import Tape, gradient_check
from pyRobustStudent.nn import LayerSpec, NetworkSpec, Network, maxout, true_label_score, \
    build, build_preset, preset, compare, PRESET_NAMES
from pyRobustStudent.tensor import Tensor


class TestSpecs(unittest.TestCase):
    """ Layer and network spec test class. """

    def test_layer_text(self):
        """Layer lines parse and print back."""
        for line in ['maxout-conv 3x3x16 pieces=2 pad=1', 'max-pool 4x4 stride=2x2',
                     'maxout-dense 64 pieces=3', 'dense 10', 'softmax']:
            self.assertEqual(LayerSpec.parse(line).to_text(), line)
        # stride defaults to the window
        self.assertEqual(LayerSpec.parse('max-pool 2x2').stride, (2, 2))
        self.assertEqual(LayerSpec.parse('maxout-conv 3x3x4').width, 8)
        self.assertRaises(ValueError, LayerSpec.parse, 'relu 4')
        self.assertRaises(ValueError, LayerSpec.parse, 'dense')
        self.assertRaises(ValueError, LayerSpec.parse, '')
        self.assertRaises(ValueError, LayerSpec, 'maxout-dense', units=4, pieces=0)

    def test_network_text(self):
        """A network spec survives its text form."""
        spec = preset('toy-teacher')
        again = NetworkSpec.parse(spec.to_text())
        self.assertEqual(again.layers, spec.layers)
        self.assertEqual(again.input_shape, (1, 8, 8))
        self.assertEqual(again.n_classes, 4)
        self.assertRaises(ValueError, NetworkSpec.parse, 'dense 2\n')

    def test_shape_chain(self):
        """Shapes of the desk presets and chain errors."""
        self.assertEqual(preset('toy-teacher').shapes(),
                         [(8, 8, 8), (8, 4, 4), (8, 4, 4), (8, 2, 2), (4,), (4,)])
        # no layer at all
        self.assertRaises(Network.ShapeChainError, build, NetworkSpec('empty', (2,), 2, ()), 0)
        # wrong class count at the end
        spec = NetworkSpec('bad', (2,), 2, ('dense 3', 'softmax'))
        self.assertRaises(Network.ShapeChainError, spec.shapes)
        # pool window larger than the map
        spec = NetworkSpec('bad', (1, 2, 2), 2, ('max-pool 3x3', 'dense 2'))
        self.assertRaises(Network.ShapeChainError, spec.shapes)
        # softmax in the middle
        spec = NetworkSpec('bad', (2,), 2, ('softmax', 'dense 2'))
        self.assertRaises(Network.ShapeChainError, spec.shapes)

    def test_counts(self):
        """Parameter and multiplication counts."""
        spec = preset('tiny-teacher')
        # maxout-dense 8 x 2 pieces on 2 inputs, then dense 2
        self.assertEqual(spec.param_count(), 2 * 16 + 16 + 8 * 2 + 2)
        self.assertEqual(spec.mult_count(), 2 * 16 + 8 * 2)
        self.assertEqual(spec.depth(), 3)
        # class count override drops the reported figures
        self.assertIsNotNone(preset('cifar-teacher').reported_params)
        self.assertIsNone(preset('cifar-teacher', n_classes=100).reported_params)
        self.assertEqual(preset('cifar-teacher', n_classes=100).n_classes, 100)
        self.assertRaises(ValueError, preset, 'no-such-net')
        for name in PRESET_NAMES:
            self.assertGreater(preset(name).param_count(), 0)

    def test_compare(self):
        """Students are smaller and cheaper than the CIFAR teacher."""
        report = compare(preset('student-1'), preset('cifar-teacher'))
        self.assertGreater(report['compression'], 1.0)
        self.assertGreater(report['speed_up'], 1.0)
        self.assertAlmostEqual(report['param_ratio'] * report['compression'], 1.0)
        self.assertGreater(report['student_depth'], report['teacher_depth'])


class TestMaxout(unittest.TestCase):
    """ Maxout and score helpers test class. """

    def test_maxout(self):
        """Maximum over groups of pieces."""
        self.assertEqual(maxout(np.array([[1.0, 3.0]]), 2).tolist(), [[3.0]])
        # one piece is the identity
        x = np.array([[1.0, -2.0, 3.0]])
        self.assertEqual(maxout(x, 1).tolist(), x.tolist())
        # loop oracle, G=4 groups of P=3 pieces
        x = np.random.default_rng(5).normal(size=(2, 12, 3))
        out = maxout(x, 3, axis=1).array
        self.assertEqual(out.shape, (2, 4, 3))
        for n in range(2):
            for g in range(4):
                for j in range(3):
                    self.assertEqual(out[n, g, j], max(x[n, g * 3 + p, j] for p in range(3)))
        self.assertRaises(Tensor.ShapeError, maxout, np.ones((1, 5)), 2)
        self.assertRaises(ValueError, maxout, np.ones((1, 4)), 0)

    def test_true_label_score(self):
        """o[y] for single and batched probabilities."""
        self.assertAlmostEqual(true_label_score(np.array([0.1, 0.7, 0.2]), 1), 0.7)
        self.assertAlmostEqual(true_label_score(np.full(4, 0.25), 3), 0.25)
        batch = np.array([[0.1, 0.9], [0.6, 0.4]])
        self.assertTrue(np.allclose(true_label_score(batch, [1, 1]), [0.9, 0.4]))
        self.assertRaises(ValueError, true_label_score, np.array([0.5, 0.5]), 2)
        self.assertRaises(Tensor.ShapeError, true_label_score, batch, [0])


class TestNetwork(unittest.TestCase):
    """ Network forward, parameters and checkpoints test class. """

    def setUp(self):
        """A tiny and a toy network."""
        self.tiny = build_preset('tiny-teacher', seed=1, role='teacher')
        self.toy = build_preset('toy-student', seed=2)

    def test_build_deterministic(self):
        """Same seed, same parameters; biases start at zero."""
        again = build_preset('toy-student', seed=2)
        for name, value in self.toy.params.items():
            self.assertTrue(np.array_equal(value.array, again.params[name].array))
            if name.endswith('.b'):
                self.assertEqual(np.abs(value.array).sum(), 0.0)
        other = build_preset('toy-student', seed=3)
        self.assertFalse(np.array_equal(self.toy.params['layer0.W'].array, other.params['layer0.W'].array))
        self.assertEqual(self.toy.param_count, self.toy.spec.param_count())
        self.assertRaises(ValueError, build_preset, 'toy-student', 0, 'critic')

    def test_forward(self):
        """Probabilities of single inputs and batches."""
        x = np.random.default_rng(0).normal(size=(5, 1, 8, 8))
        tape = Tape()
        logits, probs = self.toy.forward(tape, x)
        self.assertEqual(logits.shape, (5, 4))
        self.assertTrue(np.allclose(probs.array.sum(axis=1), 1.0, atol=1e-12))
        # log-sum-exp oracle
        z = logits.array
        oracle = np.exp(z - z.max(axis=1, keepdims=True))
        oracle /= oracle.sum(axis=1, keepdims=True)
        self.assertTrue(np.allclose(probs.array, oracle, atol=1e-12))
        # single input gives a (k,) vector equal to its batch row
        _, single = self.toy.forward(Tape(), x[3])
        self.assertEqual(single.shape, (4,))
        self.assertTrue(np.allclose(single.array, probs.array[3]))
        self.assertTrue(np.allclose(self.toy.predict(x), probs.array))
        self.assertRaises(Tensor.ShapeError, self.toy.forward, Tape(), np.ones((2, 1, 7, 7)))
        # taps expose every layer output
        taps = {}
        self.toy.forward(Tape(), x, taps)
        self.assertEqual(sorted(taps), ['layer%d' % i for i in range(len(self.toy.spec.layers))])
        self.assertEqual(taps['layer0'].shape, (5, 4, 8, 8))

    def test_zero_last_layer(self):
        """All-zero final layer gives uniform probabilities."""
        params = dict(self.tiny.params)
        params['layer1.W'] = Tensor.zeros((2, 8))
        net = Network(self.tiny.spec, params)
        self.assertTrue(np.allclose(net.predict(np.array([[0.3, -1.0], [2.0, 0.5]])), 0.5))

    def test_score_gradient(self):
        """Input gradient of o[y] matches finite differences."""
        report = gradient_check(lambda x: self.tiny.score(x.tape, x, 1), np.array([0.4, -0.7]))
        self.assertTrue(report.passed, report.relative_error)
        # softened score at a higher temperature is closer to uniform
        x = np.array([0.4, -0.7])
        raw = self.tiny.score(Tape(), x, 1).item()
        soft = self.tiny.score(Tape(), x, 1, temperature=20.0).item()
        self.assertLessEqual(abs(soft - 0.5), abs(raw - 0.5) + 1e-12)

    def test_params(self):
        """Frozen networks, binding and parameter groups."""
        tape = Tape()
        nodes = self.toy.bind(tape)
        self.assertIs(self.toy.bind(tape)['layer0.W'], nodes['layer0.W'])
        self.assertTrue(nodes['layer0.W'].requires_grad)
        self.assertEqual(self.toy.param_group('layer0.W'), 'conv')
        self.assertEqual(self.toy.param_group('layer5.b'), 'linear')
        teacher = self.tiny.copy().freeze()
        self.assertFalse(teacher.bind(Tape())['layer0.W'].requires_grad)
        self.assertRaises(Network.Error, teacher.set_params, dict(teacher.params))
        params = dict(self.tiny.params)
        params['layer0.W'] = Tensor.zeros((3, 2))
        self.assertRaises(Network.ShapeChainError, self.tiny.copy().set_params, params)
        del params['layer0.W']
        self.assertRaises(Network.Error, self.tiny.copy().set_params, params)

    def test_checkpoint(self):
        """Checkpoints round-trip and reject damaged frames."""
        frame = self.toy.to_bytes()
        net = Network.from_bytes(frame)
        self.assertEqual(net.role, 'student')
        self.assertEqual(net.spec.layers, self.toy.spec.layers)
        for name, value in self.toy.params.items():
            self.assertTrue(np.array_equal(net.params[name].array, value.array))
        self.assertEqual(Network.from_bytes(self.tiny.to_bytes()).role, 'teacher')
        # damaged frames
        broken = bytearray(frame)
        broken[len(broken) // 2] ^= 0xFF
        self.assertRaises(Network.CheckpointError, Network.from_bytes, bytes(broken))
        self.assertRaises(Network.CheckpointError, Network.from_bytes, b'XXXX' + frame[4:])
        self.assertRaises(Network.CheckpointError, Network.from_bytes, frame[:10])
        # files
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'toy.rsck')
            self.toy.save(path)
            self.assertEqual(Network.load(path).to_bytes(), frame)


if __name__ == '__main__':
    unittest.main()

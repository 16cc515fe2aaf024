""" Test of pyRobustStudent desk-scale experiments (set ROBUST_STUDENT_SLOW=1 to run) """

import os
import shutil
import tempfile
import unittest

import numpy as np

from pyRobustStudent.cli import ExperimentConfig, run_protocol
from pyRobustStudent.nn import build_preset
from pyRobustStudent.robustness import BallSpec, check_contrapositive, flip_search, perturbation_bound, \
    verify_proof_chain

SLOW = os.environ.get('ROBUST_STUDENT_SLOW') == '1'


@unittest.skipUnless(SLOW, 'set ROBUST_STUDENT_SLOW=1 to run desk-scale experiments')
class TestBoundOracle(unittest.TestCase):
    """ Perturbation bound against grid flips on many tiny pairs test class. """

    def test_contrapositive(self):
        """No grid flip is shorter than the bound computed on the same grid."""
        rng = np.random.default_rng(5)
        for i in range(20):
            teacher = build_preset('tiny-teacher', seed=100 + i, role='teacher')
            student = build_preset('tiny-student', seed=200 + i)
            x = rng.uniform(-1.0, 1.0, size=2)
            ball = BallSpec(x, 0.5)
            for y in (0, 1):
                bound = perturbation_bound(student, teacher, x, y, ball, grid=61)
                flip = flip_search(student, teacher, x, y, ball, resolution=61)
                self.assertTrue(check_contrapositive(bound, flip), 'pair %d label %d' % (i, y))

    def test_integral_identity(self):
        """Midpoint quadrature of the gradient line integral within 1e-4."""
        rng = np.random.default_rng(6)
        for i in range(20):
            teacher = build_preset('tiny-teacher', seed=300 + i, role='teacher')
            student = build_preset('tiny-student', seed=400 + i)
            x, delta = rng.uniform(-1.0, 1.0, size=2), rng.normal(0.0, 0.01, size=2)
            report = verify_proof_chain(student, teacher, x, 0, delta, steps=1000)
            for check in report.checks[:2]:
                self.assertLess(check.values['error'], 1e-4)


@unittest.skipUnless(SLOW, 'set ROBUST_STUDENT_SLOW=1 to run desk-scale experiments')
class TestDeskScale(unittest.TestCase):
    """ Directional robust student claims on toy data test class. """

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.mkdtemp()
        cls.out = os.path.join(cls.tmp, 'toy')
        methods = {'experiment': {'methods': 'teacher,kd,robust'}}
        noise = ExperimentConfig.load('toy-noise', overrides=methods)
        cls.noise = run_protocol(noise, cls.out).table.rows
        cls.lowest = 'snr=%g' % min(noise.getlist('protocol', 'snrs', float))
        # same training settings, so every network is resumed from its checkpoint
        clean = ExperimentConfig.load('toy-noise', overrides={'experiment': {'methods': 'teacher,kd,robust',
                                                                            'protocol': 'single-train'}})
        cls.clean = run_protocol(clean, cls.out).table.rows
        cls.bounds = run_protocol(ExperimentConfig.load('toy-bound', overrides=methods), cls.out).table.rows

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp)

    def _by_seed(self, rows, method, condition):
        return {r['seed']: r['accuracy'] for r in rows if r['method'] == method and r['condition'] == condition}

    def test_noise_ordering(self):
        """Robust student beats the KD student at the lowest SNR in 4 of 5 seeds."""
        robust = self._by_seed(self.noise, 'robust', self.lowest)
        kd = self._by_seed(self.noise, 'kd', self.lowest)
        self.assertEqual(len(robust), 5)
        wins = sum(robust[seed] >= kd[seed] for seed in robust)
        self.assertGreaterEqual(wins, 4)

    def test_clean_accuracy(self):
        """Robust training costs at most 2 points of clean accuracy."""
        robust = np.mean(list(self._by_seed(self.clean, 'robust', 'clean').values()))
        kd = np.mean(list(self._by_seed(self.clean, 'kd', 'clean').values()))
        self.assertGreaterEqual(robust, kd - 0.02)

    def test_bound_ordering(self):
        """Robust student has the larger median bound in 4 of 5 seeds."""
        def medians(method):
            return {r['seed']: r['bound_median'] if r['bound_median'] is not None else -np.inf
                    for r in self.bounds if r['method'] == method}

        robust, kd = medians('robust'), medians('kd')
        self.assertEqual(len(robust), 5)
        self.assertGreaterEqual(sum(robust[seed] >= kd[seed] for seed in robust), 4)

    def test_rerun(self):
        """A fresh run of the same config reproduces the results file byte for byte."""
        config = ExperimentConfig.load('toy-train', overrides={'experiment': {'seeds': '0,1'}})
        texts = []
        for name in ('a', 'b'):
            out = os.path.join(self.tmp, name)
            run_protocol(config, out)
            with open(os.path.join(out, 'results.csv')) as f:
                texts.append(f.read())
        self.assertEqual(texts[0], texts[1])


if __name__ == '__main__':
    unittest.main()

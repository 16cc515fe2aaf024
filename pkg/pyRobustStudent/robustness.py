""" pyRobustStudent robustness: perturbation lower bound, proof chain checks and flip search """

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .constants import (BOUND_SLACK, DEFAULT_NORM, DEFAULT_RADIUS,
                        DEFAULT_SAMPLES, QUADRATURE_TOL)
from .tensor import Tensor
from .utils import dual_norm_order, make_rng, vector_norm

# add a logger for pyRobustStudent.robustness
logger = logging.getLogger(__name__)

# points evaluated per tape
CHUNK = 256


@dataclass
class BallSpec:
    """ Ball B_p(center, radius) in input space """
    center: np.ndarray
    radius: float
    p: float = DEFAULT_NORM

    def __post_init__(self):
        self.center = np.array(self.center.array if isinstance(self.center, Tensor) else self.center,
                               dtype=np.float64)
        self.radius = float(self.radius)
        self.p = float(self.p)
        if self.radius < 0:
            raise ValueError('radius out of range (must be >= 0)')
        if self.p < 1:
            raise ValueError('norm order out of range (must be >= 1)')

    @property
    def dim(self):
        return self.center.size

    def contains(self, z):
        """Membership test ||z - center||_p <= radius."""
        return vector_norm(np.asarray(z, dtype=np.float64) - self.center, self.p) <= self.radius + 1e-12


@dataclass
class BoundEstimate:
    """ Lower bound on the perturbation norm able to flip f_S > f_T """
    numerator: float
    denominator: float
    bound: float
    defined: bool
    samples: int
    seed: int
    method: str
    radius: float = 0.0
    p: float = DEFAULT_NORM

    def as_dict(self):
        return {'numerator': self.numerator, 'denominator': self.denominator, 'bound': self.bound,
                'defined': self.defined, 'samples': self.samples, 'seed': self.seed,
                'method': self.method, 'radius': self.radius, 'p': self.p}


@dataclass
class ChainCheck:
    """ One step of the proof chain verification """
    name: str
    passed: bool
    values: dict = field(default_factory=dict)


@dataclass
class ChainReport:
    """ Outcome of verify_proof_chain """
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def first_failure(self):
        for check in self.checks:
            if not check.passed:
                return check
        return None


@dataclass
class FlipResult:
    """ Smallest sampled perturbation for which the teacher out-scores the student """
    delta: np.ndarray
    norm: float
    evaluated: int


class LinearScore:
    """Affine score model f(z) = w . z + b.

    Exposes the same score() call as a Network, so every routine of this
    module accepts it; gradients and bounds then have closed forms.
    """

    def __init__(self, w, b=0.0):
        self.w = np.array(w, dtype=np.float64)
        self.b = float(b)
        self.input_shape = self.w.shape

    def __repr__(self):
        return 'LinearScore(w=%s, b=%r)' % (self.w.tolist(), self.b)

    def score(self, tape, x, y=None, temperature=1.0):
        if not isinstance(x, ad.Node):
            x = tape.constant(x)
        single = x.shape == self.input_shape
        n = 1 if single else x.shape[0]
        flat = ad.reshape(x, (n, self.w.size))
        out = ad.matmul(flat, tape.constant(self.w.reshape(self.w.size, 1)))
        out = ad.add(ad.reshape(out, () if single else (n,)), self.b)
        return out


##################
# score functions
##################
def _labels(y, n):
    return np.full(n, int(y), dtype=np.int64) if np.ndim(y) == 0 else np.asarray(y, dtype=np.int64)


def raw_scores(model, points, y):
    """True-label scores (temperature 1) of a batch of points, graph free.

    :rtype: numpy.ndarray
    """
    points = np.asarray(points, dtype=np.float64)
    out = []
    for start in range(0, points.shape[0], CHUNK):
        chunk = points[start:start + CHUNK]
        tape = Tape(record=False)
        out.append(np.atleast_1d(model.score(tape, chunk, _labels(y, len(chunk))).array))
    return np.concatenate(out)


def input_grads(model, points, y):
    """Gradient of the raw true-label score at each point.

    :rtype: numpy.ndarray
    """
    points = np.asarray(points, dtype=np.float64)
    out = []
    for start in range(0, points.shape[0], CHUNK):
        chunk = points[start:start + CHUNK]
        tape = Tape()
        z = tape.leaf(chunk)
        s = model.score(tape, z, _labels(y, len(chunk)))
        out.append(tape.backward(ad.reduce_sum(s), [z])[z].array.copy())
    return np.concatenate(out, axis=0)


def _gaps(net_S, net_T, points, y, p):
    diff = input_grads(net_T, points, y) - input_grads(net_S, points, y)
    return np.array([vector_norm(d, p) for d in diff])


def gradient_gap(net_S, net_T, z, y, p=DEFAULT_NORM):
    """||grad f_T(z) - grad f_S(z)||_p at the raw true-label scores.

    :rtype: float
    """
    z = np.asarray(z.array if isinstance(z, Tensor) else z, dtype=np.float64)
    return float(_gaps(net_S, net_T, z[np.newaxis], y, p)[0])


#################
# ball functions
#################
def sample_ball(ball, samples, seed):
    """Uniform points of the ball, drawn one after the other.

    Every point uses its own consecutive draws of one generator, so the
    first n points of a larger request are the n points of a smaller one.
    The 2-ball uses a normalized gaussian direction and a U^(1/d) radius,
    the inf-ball a uniform cube.

    :rtype: numpy.ndarray of shape (samples,) + center shape
    """
    if samples < 1:
        raise ValueError('samples out of range (must be >= 1)')
    rng = make_rng(seed)
    d = ball.dim
    offsets = np.empty((samples, d))
    for i in range(samples):
        if math.isinf(ball.p):
            offsets[i] = rng.uniform(-1.0, 1.0, size=d) * ball.radius
            continue
        direction = rng.standard_normal(d)
        u = rng.uniform()
        if ball.p == 2.0:
            direction /= max(np.linalg.norm(direction), 1e-300)
        else:
            # general p: rescale onto the unit p-sphere
            direction /= max(vector_norm(direction, ball.p), 1e-300)
        offsets[i] = direction * ball.radius * u ** (1.0 / d)
    return ball.center + offsets.reshape((samples,) + ball.center.shape)


def grid_points(ball, resolution):
    """Points of a regular grid over the bounding box that fall inside the ball.

    :param resolution: points per axis (odd values include the center)
    :type resolution: int
    :rtype: numpy.ndarray
    """
    if ball.dim > 3:
        raise ValueError('grid search needs an input dimension <= 3 (got %d)' % ball.dim)
    if resolution < 1:
        raise ValueError('resolution out of range (must be >= 1)')
    axis = np.linspace(-ball.radius, ball.radius, int(resolution)) if resolution > 1 else np.zeros(1)
    offsets = np.array(list(itertools.product(axis, repeat=ball.dim)))
    norms = np.array([vector_norm(o, ball.p) for o in offsets])
    offsets = offsets[norms <= ball.radius + 1e-12]
    return ball.center + offsets.reshape((len(offsets),) + ball.center.shape)


def max_gap_over_ball(net_S, net_T, ball, y, samples=DEFAULT_SAMPLES, seed=0):
    """Largest gradient gap over sampled ball points and the center.

    A sampled maximum is a lower estimate of the true maximum.

    :rtype: float
    """
    points = np.concatenate([ball.center[np.newaxis], sample_ball(ball, samples, seed)])
    return float(np.max(_gaps(net_S, net_T, points, y, ball.p)))


def perturbation_bound(net_S, net_T, x, y, ball=None, samples=DEFAULT_SAMPLES, seed=0, grid=None):
    """Perturbation norm below which the student keeps out-scoring the teacher.

    bound = (f_S(x) - f_T(x)) / max_z ||grad f_T(z) - grad f_S(z)||, flagged
    undefined when the numerator is not positive.

    :param ball: ball for the denominator (defaults to B_2(x, DEFAULT_RADIUS))
    :type ball: BallSpec
    :param grid: use a grid of this resolution instead of random samples
    :type grid: int
    :rtype: BoundEstimate
    """
    x = np.asarray(x.array if isinstance(x, Tensor) else x, dtype=np.float64)
    if ball is None:
        ball = BallSpec(x, DEFAULT_RADIUS)
    numerator = float(raw_scores(net_S, x[np.newaxis], y)[0] - raw_scores(net_T, x[np.newaxis], y)[0])
    if grid is not None:
        points = grid_points(ball, grid)
        method = 'grid'
    else:
        points = np.concatenate([ball.center[np.newaxis], sample_ball(ball, samples, seed)])
        method = 'sampled'
    denominator = float(np.max(_gaps(net_S, net_T, points, y, ball.p)))
    defined = numerator > 0
    if not defined:
        bound = None
        logger.warning('bound undefined at label %s: student score does not exceed teacher score (%.3g)',
                       y, numerator)
    elif denominator == 0.0:
        bound = math.inf
    else:
        bound = numerator / denominator
    return BoundEstimate(numerator, denominator, bound, defined, len(points), seed, method, ball.radius, ball.p)


def verify_proof_chain(net_S, net_T, x, y, delta, steps=1000, tol=QUADRATURE_TOL, p=DEFAULT_NORM):
    """Check numerically the chain of steps behind the perturbation bound.

    (a) f(x + delta) = f(x) + integral of <grad f(x + t delta), delta> dt for
        both networks, integral by the midpoint rule with steps points;
    (b) |<grad gap, delta>| <= ||grad gap||_q ||delta||_p at every point;
    (c) when the teacher out-scores the student at x + delta,
        ||delta||_p * mean ||grad gap||_q >= f_S(x) - f_T(x).

    :rtype: ChainReport
    """
    if steps < 1:
        raise ValueError('steps out of range (must be >= 1)')
    x = np.asarray(x.array if isinstance(x, Tensor) else x, dtype=np.float64)
    delta = np.asarray(delta.array if isinstance(delta, Tensor) else delta, dtype=np.float64)
    if delta.shape != x.shape:
        raise Tensor.ShapeError('delta shape %s does not match x %s' % (list(delta.shape), list(x.shape)))
    q = dual_norm_order(p)
    t = (np.arange(steps) + 0.5) / steps
    path = x[np.newaxis] + t.reshape((steps,) + (1,) * x.ndim) * delta[np.newaxis]
    ends = np.stack([x, x + delta])
    checks = []
    grads = {}
    for tag, model in (('S', net_S), ('T', net_T)):
        f0, f1 = raw_scores(model, ends, y)
        g = input_grads(model, path, y)
        grads[tag] = g
        integral = float(np.mean(g.reshape(steps, -1) @ delta.reshape(-1)))
        error = abs(f1 - (f0 + integral))
        checks.append(ChainCheck('integral-%s' % tag, error <= tol,
                                 {'f_x': float(f0), 'f_x_delta': float(f1), 'integral': integral, 'error': error}))
    gap = (grads['T'] - grads['S']).reshape(steps, -1)
    inner = np.abs(gap @ delta.reshape(-1))
    gap_norms = np.array([vector_norm(g, q) for g in gap])
    delta_norm = vector_norm(delta, p)
    slack = inner - gap_norms * delta_norm
    worst = int(np.argmax(slack))
    checks.append(ChainCheck('holder', bool(slack[worst] <= 1e-12),
                             {'inner': float(inner[worst]), 'product': float(gap_norms[worst] * delta_norm),
                              'point': worst}))
    f_S = checks[0].values
    f_T = checks[1].values
    flipped = f_T['f_x_delta'] > f_S['f_x_delta']
    numerator = f_S['f_x'] - f_T['f_x']
    rhs = delta_norm * float(np.mean(gap_norms))
    checks.append(ChainCheck('ratio', (not flipped) or rhs >= numerator - tol,
                             {'flipped': flipped, 'numerator': numerator, 'norm_times_gap': rhs}))
    report = ChainReport(checks)
    if not report.passed:
        logger.warning('proof chain check %s failed: %s', report.first_failure.name, report.first_failure.values)
    return report


def flip_search(net_S, net_T, x, y, ball, resolution=None, samples=DEFAULT_SAMPLES, seed=0):
    """Smallest-norm sampled perturbation with f_T(x + delta) > f_S(x + delta).

    Uses a grid of the given resolution when the input has at most 3
    dimensions, random ball samples otherwise.

    :returns: FlipResult or None when no sampled point flips
    """
    x = np.asarray(x.array if isinstance(x, Tensor) else x, dtype=np.float64)
    if resolution is not None and ball.dim <= 3:
        points = grid_points(ball, resolution)
    else:
        points = sample_ball(ball, samples, seed)
    offsets = points - x[np.newaxis]
    norms = np.array([vector_norm(o, 2.0) for o in offsets])
    order = np.argsort(norms, kind='stable')
    points, offsets, norms = points[order], offsets[order], norms[order]
    flips = np.nonzero(raw_scores(net_T, points, y) > raw_scores(net_S, points, y))[0]
    if not len(flips):
        return None
    best = int(flips[0])
    logger.debug('flip found at |delta| = %.6g among %d points', norms[best], len(points))
    return FlipResult(offsets[best].copy(), float(norms[best]), len(points))


def check_contrapositive(bound, flip, slack=BOUND_SLACK):
    """True when a found flip is not shorter than a defined bound."""
    if flip is None or not bound.defined:
        return True
    return flip.norm >= bound.bound - slack

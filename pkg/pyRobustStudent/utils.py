""" pyRobustStudent utils functions """

import hashlib
import math

import numpy as np


################
# seed functions
################
def derive_seed(base_seed, index):
    """Derive the seed of one item of a batch from a base seed.

    The derived seed is base_seed XOR index, so two calls with the same
    arguments always drive the same random stream.

    :param base_seed: seed of the whole batch
    :type base_seed: int
    :param index: item index in the batch
    :type index: int
    :returns: item seed
    :rtype: int
    """
    if int(base_seed) < 0 or int(index) < 0:
        raise ValueError('seeds and indexes must be non-negative')
    return int(base_seed) ^ int(index)


def make_rng(seed):
    """Return a numpy random generator for seed.

    :param seed: non-negative integer seed
    :type seed: int
    :rtype: numpy.random.Generator
    """
    return np.random.default_rng(int(seed))


################
# norm functions
################
def dual_norm_order(p):
    """Return q so that 1/p + 1/q = 1.

    :param p: norm order (>= 1, may be inf)
    :type p: float
    :returns: the dual order
    :rtype: float
    """
    p = float(p)
    if p < 1.0:
        raise ValueError('norm order out of range (must be >= 1)')
    if p == 1.0:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def vector_norm(values, p=2.0):
    """p-norm of an array viewed as a flat vector.

    :param values: array like
    :param p: norm order (>= 1, may be inf)
    :type p: float
    :rtype: float
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    if math.isinf(float(p)):
        return float(np.max(np.abs(flat))) if flat.size else 0.0
    return float(np.linalg.norm(flat, ord=float(p)))


def relative_error(actual, expected, floor=1e-12):
    """Relative error of two arrays measured with the euclidean norm.

    :returns: ||actual - expected|| / max(||actual||, ||expected||, floor)
    :rtype: float
    """
    a = np.asarray(actual, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(e)), floor)
    return float(np.linalg.norm(a - e)) / scale


##################
# format functions
##################
def round_sig(value, digits=6):
    """Round a float to a number of significant digits.

    :param value: value to round
    :type value: float
    :param digits: significant digits
    :type digits: int
    :rtype: float
    """
    return float('%.*g' % (digits, float(value)))


def parse_list(text, cast=float):
    """Parse a comma separated list ("1, 2,3") and cast each item.

    :param text: the list as text (an empty string gives an empty list)
    :type text: str
    :param cast: item type
    :type cast: callable
    :rtype: list
    """
    return [cast(item.strip()) for item in str(text).split(',') if item.strip()]


def parse_extent(text):
    """Parse an extent like "3x3" (or a single "3" meaning 3x3).

    :param text: extent as text
    :type text: str
    :returns: (height, width)
    :rtype: tuple
    """
    parts = str(text).lower().split('x')
    try:
        values = tuple(int(p) for p in parts)
    except ValueError:
        raise ValueError('bad extent %r (expected like 3x3)' % text)
    if len(values) == 1:
        values = (values[0], values[0])
    if len(values) != 2 or min(values) < 0:
        raise ValueError('bad extent %r (expected like 3x3)' % text)
    return values


def text_hash(text, length=12):
    """Short SHA-256 hex digest of a text.

    :param text: text to hash
    :type text: str
    :param length: number of hex chars to keep
    :type length: int
    :rtype: str
    """
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:length]

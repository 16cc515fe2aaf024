""" pyRobustStudent perturb: test-time corruptions and SNR measurement """

import logging
from dataclasses import dataclass

import numpy as np

from .constants import (PERTURB_GAUSSIAN, PERTURB_KINDS, PERTURB_NONE,
                        PERTURB_OCCLUSION, PERTURB_POISSON)
from .tensor import Tensor, as_array
from .utils import derive_seed, make_rng, parse_extent

# add a logger for pyRobustStudent.perturb
logger = logging.getLogger(__name__)


@dataclass
class PerturbationSpec:
    """One corruption setting.

    intensity is the SNR for gaussian-snr, the peak count for poisson and
    the (height, width) block for occlusion.
    """
    kind: str = PERTURB_NONE
    intensity: object = None
    seed: int = 0
    db: bool = False
    clip: bool = False

    class Error(ValueError):
        """ Exception raise on a malformed perturbation setting. """
        pass

    def __post_init__(self):
        if self.kind not in PERTURB_KINDS:
            raise PerturbationSpec.Error('unknown perturbation kind %r' % self.kind)
        try:
            if self.kind == PERTURB_OCCLUSION:
                block = self.intensity
                self.intensity = parse_extent(block) if isinstance(block, (str, int)) else tuple(int(e) for e in block)
            elif self.kind in (PERTURB_GAUSSIAN, PERTURB_POISSON):
                self.intensity = float(self.intensity)
        except (TypeError, ValueError) as e:
            raise PerturbationSpec.Error('bad %s intensity %r (%s)' % (self.kind, self.intensity, e))
        if self.kind in (PERTURB_GAUSSIAN, PERTURB_POISSON):
            if self.kind == PERTURB_POISSON and not self.intensity > 0:
                raise PerturbationSpec.Error('peak out of range (must be > 0)')
            if self.kind == PERTURB_GAUSSIAN and not self.db and not self.intensity > 0:
                raise PerturbationSpec.Error('snr out of range (must be > 0)')
        if int(self.seed) < 0:
            raise PerturbationSpec.Error('seed out of range (must be >= 0)')

    @property
    def condition(self):
        """Short label used in result rows ('snr=10', 'block=4', ...)."""
        if self.kind == PERTURB_GAUSSIAN:
            return 'snr=%g%s' % (self.intensity, 'dB' if self.db else '')
        if self.kind == PERTURB_POISSON:
            return 'peak=%g' % self.intensity
        if self.kind == PERTURB_OCCLUSION:
            bh, bw = self.intensity
            return 'block=%d' % bh if bh == bw else 'block=%dx%d' % (bh, bw)
        return 'clean'

    def to_text(self):
        if self.kind == PERTURB_NONE:
            return self.kind
        if self.kind == PERTURB_OCCLUSION:
            return '%s:%dx%d' % (self.kind, self.intensity[0], self.intensity[1])
        return '%s:%g%s' % (self.kind, self.intensity, 'dB' if self.db else '')

    @classmethod
    def parse(cls, text, seed=0, clip=False):
        """Build a spec from 'gaussian-snr:10', 'gaussian-snr:6dB', 'poisson:50', 'occlusion:4x4' or 'none'."""
        kind, _, value = str(text).strip().partition(':')
        db = value.lower().endswith('db')
        if db:
            value = value[:-2]
        return cls(kind, value or None, seed, db, clip)


#############
# generators
#############
def _image(x):
    return np.array(as_array(x), dtype=np.float64)


def gaussian_at_snr(x, snr, seed, db=False, clip=False):
    """Add white gaussian noise with variance Var(x) / snr.

    :param x: image
    :type x: Tensor
    :param snr: signal to noise power ratio (in dB when db is set)
    :type snr: float
    :param seed: noise seed
    :type seed: int
    :param clip: clip the result to [0, 1]
    :type clip: bool
    :rtype: Tensor
    """
    image = _image(x)
    ratio = 10.0 ** (float(snr) / 10.0) if db else float(snr)
    if not ratio > 0:
        raise ValueError('snr out of range (must be > 0)')
    variance = float(np.var(image))
    if variance == 0.0:
        raise ValueError('zero-variance image, SNR is undefined')
    noise = make_rng(seed).normal(0.0, np.sqrt(variance / ratio), size=image.shape)
    out = image + noise
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return Tensor._from_owned(out)


def poisson_noise(x, peak, seed, clip=False):
    """Shot noise: Poisson(peak * x) / peak on x mapped to [0, 1].

    Images already inside [0, 1] are used as they are; others are min-max
    scaled first and scaled back afterwards.

    :param peak: photon count of a unit pixel (> 0)
    :type peak: float
    :rtype: Tensor
    """
    if not float(peak) > 0:
        raise ValueError('peak out of range (must be > 0)')
    image = _image(x)
    lo, hi = float(image.min()), float(image.max())
    if lo >= 0.0 and hi <= 1.0:
        lo, span = 0.0, 1.0
    else:
        span = hi - lo if hi > lo else 1.0
    unit = (image - lo) / span
    counts = make_rng(seed).poisson(float(peak) * unit)
    out = counts / float(peak) * span + lo
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return Tensor._from_owned(out)


def occlusion_position(shape, block, seed):
    """Random top-left corner of a block inside an H x W extent.

    :rtype: tuple
    """
    h, w = shape[-2], shape[-1]
    bh, bw = block
    if bh > h or bw > w:
        raise ValueError('block %dx%d does not fit a %dx%d image' % (bh, bw, h, w))
    rng = make_rng(seed)
    return int(rng.integers(0, h - bh + 1)), int(rng.integers(0, w - bw + 1))


def occlude(x, block, seed):
    """Zero a bh x bw rectangle at a random position across all channels.

    :param x: C x H x W image
    :type x: Tensor
    :param block: (bh, bw); a zero extent leaves the image unchanged
    :type block: tuple
    :rtype: Tensor
    """
    image = _image(x)
    bh, bw = (int(e) for e in block)
    if bh < 0 or bw < 0:
        raise ValueError('block extents must be >= 0')
    if image.ndim < 2:
        raise Tensor.ShapeError('occlusion needs an image, got shape %s' % list(image.shape))
    top, left = occlusion_position(image.shape, (bh, bw), seed)
    image[..., top:top + bh, left:left + bw] = 0.0
    return Tensor._from_owned(image)


def measure_snr(clean, noisy):
    """Var(clean) / Var(noisy - clean).

    :rtype: float
    """
    clean, noisy = as_array(clean), as_array(noisy)
    if clean.shape != noisy.shape:
        raise Tensor.ShapeError('shapes %s and %s differ' % (list(clean.shape), list(noisy.shape)))
    noise_var = float(np.var(noisy - clean))
    if noise_var == 0.0:
        raise ValueError('zero noise variance, SNR is infinite')
    return float(np.var(clean)) / noise_var


def brightness_shift(x, offset=0.0, gain=1.0):
    """Affine intensity change gain * x + offset (domain shift of a toy set)."""
    return Tensor._from_owned(_image(x) * float(gain) + float(offset))


##############
# dispatchers
##############
def apply_perturbation(x, spec, seed=None):
    """Apply one PerturbationSpec to one image (seed defaults to spec.seed).

    :rtype: Tensor
    """
    seed = spec.seed if seed is None else seed
    if spec.kind == PERTURB_GAUSSIAN:
        return gaussian_at_snr(x, spec.intensity, seed, spec.db, spec.clip)
    if spec.kind == PERTURB_POISSON:
        return poisson_noise(x, spec.intensity, seed, spec.clip)
    if spec.kind == PERTURB_OCCLUSION:
        return occlude(x, spec.intensity, seed)
    return x if isinstance(x, Tensor) else Tensor(x)


def perturb_batch(images, spec):
    """Perturb every image of an N x ... batch with seed spec.seed XOR index.

    :rtype: Tensor
    """
    batch = as_array(images)
    if spec.kind == PERTURB_NONE:
        return images if isinstance(images, Tensor) else Tensor(batch)
    out = np.empty_like(batch)
    for i in range(batch.shape[0]):
        out[i] = apply_perturbation(batch[i], spec, derive_seed(spec.seed, i)).array
    logger.debug('perturbed %d images with %s', batch.shape[0], spec.to_text())
    return Tensor._from_owned(out)

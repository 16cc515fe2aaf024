""" pyRobustStudent Tensor: dense arrays of 64-bit reals and their kernels """

import logging
from functools import lru_cache

import numpy as np

# add a logger for pyRobustStudent.tensor
logger = logging.getLogger(__name__)


class Tensor:
    """Dense n-dimensional array of 64-bit reals.

    Storage is a read-only row-major numpy array. Every stored value is
    finite: building a Tensor from data holding NaN or Inf raises
    :class:`Tensor.NonFiniteError`.
    """

    class Error(Exception):
        """ Base exception for Tensor related errors. """
        pass

    class ShapeError(Error):
        """ Exception raise on inconsistent shapes. """
        pass

    class NonFiniteError(Error):
        """ Exception raise when a NaN or an Inf would be stored. """
        pass

    class AxisError(Error):
        """ Exception raise on an invalid reduction axis. """
        pass

    __slots__ = ('_array',)

    def __init__(self, data, shape=None):
        """Constructor.

        :param data: nested sequence, scalar, numpy array or Tensor
        :param shape: extents to reshape the flat data to (optional)
        :type shape: list or tuple
        """
        if isinstance(data, Tensor):
            data = data.array
        array = np.array(data, dtype=np.float64)
        if shape is not None:
            shape = tuple(int(e) for e in shape)
            if array.size != int(np.prod(shape, dtype=np.int64)):
                raise Tensor.ShapeError('data length %d does not match shape %s' % (array.size, list(shape)))
            array = array.reshape(shape)
        self._array = _checked(array)

    @classmethod
    def _from_owned(cls, array):
        """Wrap an array produced by a kernel (no copy)."""
        tensor = cls.__new__(cls)
        tensor._array = _checked(np.asarray(array, dtype=np.float64))
        return tensor

    @classmethod
    def from_array(cls, array):
        """Build a Tensor from a numpy array (copied)."""
        return cls(np.array(array, dtype=np.float64))

    @classmethod
    def zeros(cls, shape):
        """Return a Tensor of zeros."""
        return cls._from_owned(np.zeros(tuple(shape)))

    @classmethod
    def ones(cls, shape):
        """Return a Tensor of ones."""
        return cls._from_owned(np.ones(tuple(shape)))

    def __repr__(self):
        return 'Tensor(shape=%s, data=%s)' % (list(self.shape), np.array2string(self._array, threshold=8))

    def __len__(self):
        return self._array.shape[0] if self._array.ndim else 1

    @property
    def shape(self):
        """Extents as a tuple."""
        return self._array.shape

    @property
    def ndim(self):
        return self._array.ndim

    @property
    def size(self):
        return self._array.size

    @property
    def array(self):
        """Read-only numpy view with the tensor shape."""
        return self._array

    @property
    def data(self):
        """Read-only flat row-major view."""
        return self._array.reshape(-1)

    def item(self):
        """Return the value of a one element tensor as a float."""
        if self._array.size != 1:
            raise Tensor.ShapeError('item() needs a single element tensor, shape is %s' % list(self.shape))
        return float(self._array.reshape(-1)[0])

    def tolist(self):
        return self._array.tolist()

    def reshape(self, shape):
        """Return a tensor sharing data with a new shape."""
        shape = tuple(int(e) for e in shape)
        if int(np.prod(shape, dtype=np.int64)) != self.size:
            raise Tensor.ShapeError('cannot reshape %s to %s' % (list(self.shape), list(shape)))
        return Tensor._from_owned(self._array.reshape(shape))


def _checked(array):
    if array.ndim and min(array.shape) < 1:
        raise Tensor.ShapeError('extents must be positive, got %s' % list(array.shape))
    if not np.all(np.isfinite(array)):
        raise Tensor.NonFiniteError('non-finite value in tensor of shape %s' % list(array.shape))
    if array.flags.writeable:
        if not array.flags.owndata:
            array = array.copy()
        array.flags.writeable = False
    return array


def as_array(value):
    """Return the numpy array behind a Tensor (or check a raw array).

    :raises Tensor.NonFiniteError: if value holds NaN or Inf
    """
    if isinstance(value, Tensor):
        return value.array
    array = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise Tensor.NonFiniteError('non-finite value in input of shape %s' % list(array.shape))
    return array


#################
# index functions
#################
@lru_cache(maxsize=64)
def conv_index(in_shape, kh, kw):
    """Flat gather indices turning a C x H x W image into convolution columns.

    :param in_shape: (C, H, W) of the (already padded) image
    :type in_shape: tuple
    :param kh: kernel height
    :param kw: kernel width
    :returns: int array of shape (C*kh*kw, H'*W') with H' = H-kh+1, W' = W-kw+1
    """
    c, h, w = in_shape
    ho, wo = h - kh + 1, w - kw + 1
    if ho < 1 or wo < 1:
        raise Tensor.ShapeError('kernel %dx%d does not fit input %s' % (kh, kw, list(in_shape)))
    ch = np.arange(c).reshape(c, 1, 1, 1, 1)
    ki = np.arange(kh).reshape(1, kh, 1, 1, 1)
    kj = np.arange(kw).reshape(1, 1, kw, 1, 1)
    oi = np.arange(ho).reshape(1, 1, 1, ho, 1)
    oj = np.arange(wo).reshape(1, 1, 1, 1, wo)
    index = ch * (h * w) + (ki + oi) * w + (kj + oj)
    index = index.reshape(c * kh * kw, ho * wo)
    index.flags.writeable = False
    return index


@lru_cache(maxsize=64)
def pool_index(in_shape, window, stride):
    """Flat gather indices of every pooling window of a C x H x W map.

    Window members are listed in row-major order, so the first maximum
    found in a window is the one at the lowest flat index.

    :returns: int array of shape (C, H', W', ph*pw)
    """
    c, h, w = in_shape
    (ph, pw), (sh, sw) = window, stride
    if ph < 1 or pw < 1 or sh < 1 or sw < 1:
        raise Tensor.ShapeError('pool window and stride must be positive')
    if ph > h or pw > w:
        raise Tensor.ShapeError('pool window %dx%d exceeds input %s' % (ph, pw, list(in_shape)))
    ho, wo = (h - ph) // sh + 1, (w - pw) // sw + 1
    ch = np.arange(c).reshape(c, 1, 1, 1, 1)
    oi = (np.arange(ho) * sh).reshape(1, ho, 1, 1, 1)
    oj = (np.arange(wo) * sw).reshape(1, 1, wo, 1, 1)
    ki = np.arange(ph).reshape(1, 1, 1, ph, 1)
    kj = np.arange(pw).reshape(1, 1, 1, 1, pw)
    index = ch * (h * w) + (oi + ki) * w + (oj + kj)
    index = index.reshape(c, ho, wo, ph * pw)
    index.flags.writeable = False
    return index


@lru_cache(maxsize=64)
def pad_index(in_shape, padding):
    """Flat scatter indices placing a C x H x W map inside its zero-padded frame.

    :returns: (int array of shape (C*H*W,), padded shape)
    """
    c, h, w = in_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ch = np.arange(c).reshape(c, 1, 1)
    ii = np.arange(h).reshape(1, h, 1) + padding
    jj = np.arange(w).reshape(1, 1, w) + padding
    index = (ch * (hp * wp) + ii * wp + jj).reshape(-1)
    index.flags.writeable = False
    return index, (c, hp, wp)


def argmax_flat(array, axis):
    """Flat indices of the maxima of array along axis (lowest index wins ties).

    :returns: int array with the shape of array without axis
    """
    arg = np.argmax(array, axis=axis)
    grid = list(np.indices(arg.shape))
    grid.insert(axis, arg)
    return np.ravel_multi_index(grid, array.shape)


###############
# tensor kernels
###############
def matmul(a, b):
    """Matrix product of a (m x k) and b (k x n).

    :type a: Tensor
    :type b: Tensor
    :rtype: Tensor
    :raises Tensor.ShapeError: if a and b are not conformable 2-D tensors
    """
    a_arr, b_arr = as_array(a), as_array(b)
    if a_arr.ndim != 2 or b_arr.ndim != 2 or a_arr.shape[1] != b_arr.shape[0]:
        raise Tensor.ShapeError('matmul shape mismatch: %s x %s' % (list(a_arr.shape), list(b_arr.shape)))
    return Tensor._from_owned(a_arr @ b_arr)


def pad2d(x, padding):
    """Symmetric zero padding of the two trailing axes.

    :param x: tensor with at least two axes
    :param padding: rows/cols added on each side
    :type padding: int
    :rtype: Tensor
    """
    arr = as_array(x)
    if padding < 0:
        raise ValueError('padding out of range (must be >= 0)')
    if arr.ndim < 2:
        raise Tensor.ShapeError('pad2d needs at least 2 axes, got %s' % list(arr.shape))
    widths = [(0, 0)] * (arr.ndim - 2) + [(padding, padding)] * 2
    return Tensor._from_owned(np.pad(arr, widths))


def conv2d(x, kernels, bias, padding=0):
    """Valid cross-correlation plus per-channel bias.

    Input may be a single image (C_in x H x W) or a batch
    (N x C_in x H x W); output keeps the same batch form.

    :param x: input image(s)
    :type x: Tensor
    :param kernels: C_out x C_in x kh x kw weights
    :type kernels: Tensor
    :param bias: C_out biases
    :type bias: Tensor
    :param padding: symmetric zero padding applied first (default 0)
    :type padding: int
    :rtype: Tensor
    """
    arr, k_arr, b_arr = as_array(x), as_array(kernels), as_array(bias)
    single = arr.ndim == 3
    if single:
        arr = arr[np.newaxis]
    if arr.ndim != 4 or k_arr.ndim != 4 or b_arr.shape != (k_arr.shape[0],):
        raise Tensor.ShapeError('conv2d shape mismatch: input %s, kernels %s, bias %s'
                                % (list(as_array(x).shape), list(k_arr.shape), list(b_arr.shape)))
    c_out, c_in, kh, kw = k_arr.shape
    if arr.shape[1] != c_in:
        raise Tensor.ShapeError('conv2d channel mismatch: input %s, kernels %s'
                                % (list(arr.shape), list(k_arr.shape)))
    if padding:
        arr = pad2d(arr, padding).array
    n, _, h, w = arr.shape
    index = conv_index((c_in, h, w), kh, kw)
    cols = arr.reshape(n, -1)[:, index]
    out = np.matmul(k_arr.reshape(c_out, -1), cols) + b_arr[:, np.newaxis]
    out = out.reshape(n, c_out, h - kh + 1, w - kw + 1)
    return Tensor._from_owned(out[0] if single else out)


def max_pool(x, window, stride=None):
    """Max pooling of a C x H x W map (or a batch of them).

    :param x: input map(s)
    :type x: Tensor
    :param window: (ph, pw)
    :type window: tuple
    :param stride: (sh, sw), defaults to the window
    :type stride: tuple
    :returns: (pooled Tensor, flat argmax indices into x with the output shape)
    :rtype: tuple
    """
    arr = as_array(x)
    window = tuple(window)
    stride = tuple(stride) if stride is not None else window
    single = arr.ndim == 3
    if single:
        arr = arr[np.newaxis]
    if arr.ndim != 4:
        raise Tensor.ShapeError('max_pool needs C x H x W input, got %s' % list(as_array(x).shape))
    n, c, h, w = arr.shape
    index = pool_index((c, h, w), window, stride)
    flat = arr.reshape(n, -1)
    windows = flat[:, index]
    arg = np.argmax(windows, axis=-1)
    local = np.take_along_axis(index[np.newaxis].repeat(n, axis=0), arg[..., np.newaxis], axis=-1)[..., 0]
    global_index = local + (np.arange(n) * (c * h * w)).reshape(n, 1, 1, 1)
    out = flat.reshape(-1)[global_index]
    if single:
        return Tensor._from_owned(out[0]), local[0]
    return Tensor._from_owned(out), global_index


def reduce(x, op, axis=None):
    """Sum, max or mean reduction.

    :param x: input tensor
    :type x: Tensor
    :param op: 'sum', 'max' or 'mean'
    :type op: str
    :param axis: axis to reduce (all axes if None)
    :type axis: int
    :rtype: Tensor
    """
    arr = as_array(x)
    if axis is not None:
        axis = int(axis)
        if not -arr.ndim <= axis < arr.ndim:
            raise Tensor.AxisError('axis %d out of range for shape %s' % (axis, list(arr.shape)))
    if op == 'sum':
        out = np.sum(arr, axis=axis)
    elif op == 'mean':
        out = np.mean(arr, axis=axis)
    elif op == 'max':
        out = np.max(arr, axis=axis)
    else:
        raise ValueError('reduce op must be sum, max or mean (got %r)' % op)
    return Tensor._from_owned(np.asarray(out, dtype=np.float64))

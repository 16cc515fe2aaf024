""" pyRobustStudent nn: maxout layers, network specs, presets and checkpoints """

import logging
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .constants import (CKPT_FORMAT, CKPT_MAGIC, DEFAULT_PIECES, LAYER_DENSE,
                        LAYER_KINDS, LAYER_MAX_POOL, LAYER_MAXOUT_CONV,
                        LAYER_MAXOUT_DENSE, LAYER_SOFTMAX, PARAM_DEVIATION_TOL,
                        ROLE_STUDENT, ROLE_TEACHER)
from .tensor import Tensor
from .utils import make_rng, parse_extent

# add a logger for pyRobustStudent.nn
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network.

    Text form (one layer per line)::

        maxout-conv 3x3x16 pieces=2 pad=1
        max-pool 2x2 stride=2
        maxout-dense 64 pieces=2
        dense 10
        softmax
    """
    kind: str
    kernel: tuple = (3, 3)
    channels: int = 0
    pieces: int = DEFAULT_PIECES
    padding: int = 1
    window: tuple = (2, 2)
    stride: tuple = None
    units: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError('unknown layer kind %r' % self.kind)
        if self.pieces < 1:
            raise ValueError('pieces out of range (must be >= 1)')
        if self.kind == LAYER_MAXOUT_CONV and (self.channels < 1 or min(self.kernel) < 1 or self.padding < 0):
            raise ValueError('maxout-conv needs channels >= 1, kernel >= 1 and padding >= 0')
        if self.kind in (LAYER_MAXOUT_DENSE, LAYER_DENSE) and self.units < 1:
            raise ValueError('%s units out of range (must be >= 1)' % self.kind)
        if self.kind == LAYER_MAX_POOL:
            if self.stride is None:
                object.__setattr__(self, 'stride', tuple(self.window))
            if min(self.window) < 1 or min(self.stride) < 1:
                raise ValueError('pool window and stride must be >= 1')

    @property
    def has_params(self):
        return self.kind in (LAYER_MAXOUT_CONV, LAYER_MAXOUT_DENSE, LAYER_DENSE)

    @property
    def width(self):
        """Number of affine outputs (pieces included)."""
        if self.kind == LAYER_MAXOUT_CONV:
            return self.channels * self.pieces
        if self.kind == LAYER_MAXOUT_DENSE:
            return self.units * self.pieces
        return self.units

    def to_text(self):
        if self.kind == LAYER_MAXOUT_CONV:
            return '%s %dx%dx%d pieces=%d pad=%d' % (self.kind, self.kernel[0], self.kernel[1], self.channels,
                                                     self.pieces, self.padding)
        if self.kind == LAYER_MAX_POOL:
            return '%s %dx%d stride=%dx%d' % (self.kind, self.window[0], self.window[1], self.stride[0], self.stride[1])
        if self.kind == LAYER_MAXOUT_DENSE:
            return '%s %d pieces=%d' % (self.kind, self.units, self.pieces)
        if self.kind == LAYER_DENSE:
            return '%s %d' % (self.kind, self.units)
        return self.kind

    @classmethod
    def parse(cls, text):
        """Build a LayerSpec from its text form."""
        words = str(text).split()
        if not words:
            raise ValueError('empty layer line')
        kind, args = words[0], words[1:]
        options = dict(w.split('=', 1) for w in args if '=' in w)
        plain = [w for w in args if '=' not in w]
        try:
            if kind == LAYER_MAXOUT_CONV:
                kh, kw, channels = (int(v) for v in plain[0].lower().split('x'))
                return cls(kind, kernel=(kh, kw), channels=channels,
                           pieces=int(options.get('pieces', DEFAULT_PIECES)), padding=int(options.get('pad', 1)))
            if kind == LAYER_MAX_POOL:
                window = parse_extent(plain[0])
                stride = parse_extent(options['stride']) if 'stride' in options else window
                return cls(kind, window=window, stride=stride)
            if kind == LAYER_MAXOUT_DENSE:
                return cls(kind, units=int(plain[0]), pieces=int(options.get('pieces', DEFAULT_PIECES)))
            if kind == LAYER_DENSE:
                return cls(kind, units=int(plain[0]), pieces=1)
            if kind == LAYER_SOFTMAX:
                return cls(kind)
        except (IndexError, KeyError, ValueError) as e:
            raise ValueError('bad layer line %r (%s)' % (text, e))
        raise ValueError('unknown layer kind %r' % kind)


@dataclass
class NetworkSpec:
    """ Declarative network: input shape, class count and layer list """
    name: str
    input_shape: tuple
    n_classes: int
    layers: tuple
    reported_params: float = None
    reported_mults: float = None

    def __post_init__(self):
        self.input_shape = tuple(int(e) for e in self.input_shape)
        self.layers = tuple(l if isinstance(l, LayerSpec) else LayerSpec.parse(l) for l in self.layers)
        if self.n_classes < 2:
            raise ValueError('n_classes out of range (must be >= 2)')

    def to_text(self):
        lines = ['name %s' % self.name,
                 'input %s' % 'x'.join(str(e) for e in self.input_shape),
                 'classes %d' % self.n_classes]
        if self.reported_params:
            lines.append('reported-params %.6g' % self.reported_params)
        if self.reported_mults:
            lines.append('reported-mults %.6g' % self.reported_mults)
        lines.extend(layer.to_text() for layer in self.layers)
        return '\n'.join(lines) + '\n'

    @classmethod
    def parse(cls, text):
        """Build a NetworkSpec from the text written by :meth:`to_text`."""
        header = {'name': 'custom', 'reported-params': None, 'reported-mults': None}
        layers = []
        for line in str(text).splitlines():
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition(' ')
            if key in ('name', 'input', 'classes', 'reported-params', 'reported-mults'):
                header[key] = value.strip()
            else:
                layers.append(LayerSpec.parse(line))
        if 'input' not in header or 'classes' not in header:
            raise ValueError('network text needs "input" and "classes" lines')
        input_shape = tuple(int(e) for e in header['input'].lower().split('x'))
        rp, rm = header['reported-params'], header['reported-mults']
        return cls(header['name'], input_shape, int(header['classes']), tuple(layers),
                   float(rp) if rp else None, float(rm) if rm else None)

    def shapes(self):
        """Output shape of every layer (batch axis excluded).

        :raises Network.ShapeChainError: at the first inconsistent layer
        """
        if not self.layers:
            raise Network.ShapeChainError('network %s has no layer' % self.name)
        shapes = []
        shape = self.input_shape
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            where = 'layer %d (%s) of %s' % (i, layer.to_text(), self.name)
            if layer.kind == LAYER_MAXOUT_CONV:
                if len(shape) != 3:
                    raise Network.ShapeChainError('%s needs a C x H x W input, got %s' % (where, list(shape)))
                (kh, kw), p = layer.kernel, layer.padding
                out = (layer.channels, shape[1] + 2 * p - kh + 1, shape[2] + 2 * p - kw + 1)
            elif layer.kind == LAYER_MAX_POOL:
                (ph, pw), (sh, sw) = layer.window, layer.stride
                if len(shape) != 3 or ph > shape[1] or pw > shape[2]:
                    raise Network.ShapeChainError('%s window does not fit input %s' % (where, list(shape)))
                out = (shape[0], (shape[1] - ph) // sh + 1, (shape[2] - pw) // sw + 1)
            elif layer.kind in (LAYER_MAXOUT_DENSE, LAYER_DENSE):
                out = (layer.units,)
            else:
                if i != last:
                    raise Network.ShapeChainError('%s must be the last layer' % where)
                if shape != (self.n_classes,):
                    raise Network.ShapeChainError('%s gets %s, expected %d class logits'
                                                  % (where, list(shape), self.n_classes))
                out = shape
            if min(out) < 1:
                raise Network.ShapeChainError('%s gives empty output %s' % (where, list(out)))
            shapes.append(out)
            shape = out
        if shape != (self.n_classes,):
            raise Network.ShapeChainError('network %s ends with %s, expected %d class logits'
                                          % (self.name, list(shape), self.n_classes))
        return shapes

    def param_shapes(self):
        """Ordered dict-like list of (name, shape, fan_in, layer index)."""
        out = []
        shape = self.input_shape
        for i, (layer, next_shape) in enumerate(zip(self.layers, self.shapes())):
            if layer.kind == LAYER_MAXOUT_CONV:
                fan_in = shape[0] * layer.kernel[0] * layer.kernel[1]
                out.append(('layer%d.W' % i, (layer.width, shape[0]) + tuple(layer.kernel), fan_in, i))
                out.append(('layer%d.b' % i, (layer.width,), fan_in, i))
            elif layer.has_params:
                fan_in = int(np.prod(shape))
                out.append(('layer%d.W' % i, (layer.width, fan_in), fan_in, i))
                out.append(('layer%d.b' % i, (layer.width,), fan_in, i))
            shape = next_shape
        return out

    def param_count(self):
        return sum(int(np.prod(s)) for _, s, _, _ in self.param_shapes())

    def mult_count(self):
        """Multiplications of one forward pass (affine layers only)."""
        total = 0
        shape = self.input_shape
        for layer, out in zip(self.layers, self.shapes()):
            if layer.kind == LAYER_MAXOUT_CONV:
                total += out[1] * out[2] * layer.width * shape[0] * layer.kernel[0] * layer.kernel[1]
            elif layer.has_params:
                total += int(np.prod(shape)) * layer.width
            shape = out
        return total

    def depth(self):
        """Layer count as reported for the architectures (pools excluded)."""
        return sum(1 for layer in self.layers if layer.kind != LAYER_MAX_POOL)


def maxout(x, pieces, axis=1):
    """Maximum over groups of consecutive pieces along axis.

    Entry g*pieces + p of axis belongs to group g. Nodes stay on their tape
    (gradient to the winning piece only); Tensors and arrays give a Tensor.

    :param x: input with an axis of size G * pieces
    :param pieces: pieces per group (>= 1)
    :type pieces: int
    :param axis: grouped axis
    :type axis: int
    """
    if int(pieces) < 1:
        raise ValueError('pieces out of range (must be >= 1)')
    if not isinstance(x, Node):
        tape = Tape()
        with tape.no_record():
            return maxout(tape.leaf(x), pieces, axis).value
    if pieces == 1:
        return x
    shape = x.shape
    axis = axis % len(shape)
    if shape[axis] % pieces:
        raise Tensor.ShapeError('axis of size %d is not a multiple of %d pieces' % (shape[axis], pieces))
    grouped = shape[:axis] + (shape[axis] // pieces, pieces) + shape[axis + 1:]
    return ad.reduce_max(ad.reshape(x, grouped), axis=axis + 1)


def true_label_score(o, y):
    """Probability given to the true label: o[y] (or o[n, y[n]] for a batch).

    :param o: class probabilities (k,) or (N, k)
    :param y: label or labels
    :returns: Node when o is a Node, else a float (single) or a numpy array
    """
    if not isinstance(o, Node):
        tape = Tape()
        with tape.no_record():
            out = true_label_score(tape.leaf(o), y)
        return out.item() if out.size == 1 and np.ndim(y) == 0 else out.array.copy()
    k = o.shape[-1]
    labels = np.asarray(y, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError('label out of range (must be in [0, %d))' % k)
    if len(o.shape) == 1:
        if labels.ndim != 0:
            raise Tensor.ShapeError('a single probability vector needs a single label')
        return ad.take(o, labels)
    if labels.shape != (o.shape[0],):
        raise Tensor.ShapeError('%d labels for a batch of %d' % (labels.size, o.shape[0]))
    return ad.take(o, np.arange(o.shape[0], dtype=np.int64) * k + labels)


def softened_score(logits, probs, y, temperature=1.0):
    """True label entry of softmax(logits / temperature); probs is used as is at temperature 1."""
    if temperature <= 0:
        raise ValueError('temperature out of range (must be > 0)')
    if temperature != 1.0:
        probs = ad.softmax(ad.scale(logits, 1.0 / temperature), axis=-1)
    return true_label_score(probs, y)


class Network:
    """ Network instance: a spec, its parameters and a role """

    class Error(Exception):
        """ Base exception for Network related errors. """
        pass

    class ShapeChainError(Error):
        """ Exception raise when layer shapes do not chain. """
        pass

    class CheckpointError(Error):
        """ Exception raise on a malformed checkpoint. """
        pass

    def __init__(self, spec, params, role=ROLE_STUDENT):
        """Constructor.

        :param spec: architecture
        :type spec: NetworkSpec
        :param params: name -> Tensor, as listed by spec.param_shapes()
        :type params: dict
        :param role: 'teacher' or 'student'
        :type role: str
        """
        if role not in (ROLE_TEACHER, ROLE_STUDENT):
            raise ValueError('role must be teacher or student (got %r)' % role)
        self.spec = spec
        self.role = role
        self.frozen = False
        self.history = []
        self.params = {}
        self.set_params(params)
        self.metadata = _build_metadata(spec)

    def __repr__(self):
        return 'Network(name=%r, role=%r, params=%d)' % (self.spec.name, self.role, self.param_count)

    @property
    def param_count(self):
        return self.metadata['param_count']

    @property
    def n_classes(self):
        return self.spec.n_classes

    @property
    def input_shape(self):
        return self.spec.input_shape

    def freeze(self):
        """Mark parameters read-only (teacher after training)."""
        self.frozen = True
        return self

    def set_params(self, params):
        if self.frozen:
            raise Network.Error('network %s is frozen' % self.spec.name)
        expected = {name: shape for name, shape, _, _ in self.spec.param_shapes()}
        if set(params) != set(expected):
            raise Network.Error('parameter names %s do not match spec %s' % (sorted(params), sorted(expected)))
        for name, value in params.items():
            value = value if isinstance(value, Tensor) else Tensor(value)
            if value.shape != expected[name]:
                raise Network.ShapeChainError('parameter %s has shape %s, expected %s'
                                              % (name, list(value.shape), list(expected[name])))
            self.params[name] = value

    def param_group(self, name):
        """'conv' for convolution parameters, 'linear' for the others."""
        index = int(name.split('.')[0][len('layer'):])
        return 'conv' if self.spec.layers[index].kind == LAYER_MAXOUT_CONV else 'linear'

    def bind(self, tape):
        """Parameter nodes of this network on tape (registered once per tape)."""
        prefix = '%s#%x/' % (self.spec.name, id(self))
        nodes = {}
        for name, value in self.params.items():
            key = prefix + name
            node = tape.roots.get(key)
            if node is None:
                node = tape.leaf(value, name=key, requires_grad=not self.frozen)
            nodes[name] = node
        return nodes

    def forward(self, tape, x, taps=None):
        """Logits and class probabilities.

        :param tape: tape recording the computation
        :type tape: Tape
        :param x: one input (input_shape) or a batch (N x input_shape)
        :type x: Node, Tensor or array
        :param taps: dict filled with 'layer<i>' -> layer output node (optional)
        :type taps: dict
        :returns: (logits, probabilities) nodes, (k,) or (N, k)
        :rtype: tuple
        """
        if not isinstance(x, Node):
            x = tape.constant(x)
        single = x.shape == self.spec.input_shape
        if single:
            x = ad.reshape(x, (1,) + x.shape)
        elif x.shape[1:] != self.spec.input_shape:
            raise Tensor.ShapeError('input shape %s does not match %s' % (list(x.shape), list(self.spec.input_shape)))
        params = self.bind(tape)
        h = x
        logits = None
        for i, layer in enumerate(self.spec.layers):
            if layer.kind == LAYER_MAXOUT_CONV:
                h = ad.conv2d(h, params['layer%d.W' % i], params['layer%d.b' % i], layer.padding)
                h = maxout(h, layer.pieces, axis=1)
            elif layer.kind == LAYER_MAX_POOL:
                h = ad.max_pool(h, layer.window, layer.stride)
            elif layer.kind in (LAYER_MAXOUT_DENSE, LAYER_DENSE):
                h = ad.reshape(h, (h.shape[0], int(np.prod(h.shape[1:]))))
                h = ad.dense(h, params['layer%d.W' % i], params['layer%d.b' % i])
                if layer.kind == LAYER_MAXOUT_DENSE:
                    h = maxout(h, layer.pieces, axis=1)
            else:
                logits = h
                h = ad.softmax(h, axis=-1)
            if taps is not None:
                taps['layer%d' % i] = h
        if logits is None:
            logits, h = h, ad.softmax(h, axis=-1)
        if single:
            logits = ad.reshape(logits, (self.n_classes,))
            h = ad.reshape(h, (self.n_classes,))
        return logits, h

    def score(self, tape, x, y, temperature=1.0):
        """Softened probability of the true label for each example.

        :param temperature: softmax temperature (1 gives the raw score)
        :type temperature: float
        :rtype: Node
        """
        logits, probs = self.forward(tape, x)
        return softened_score(logits, probs, y, temperature)

    def predict(self, x, batch_size=256):
        """Class probabilities of a batch, computed without recording a graph.

        :rtype: numpy.ndarray
        """
        x = x.array if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if x.shape == self.spec.input_shape:
            x = x[np.newaxis]
        chunks = []
        for start in range(0, x.shape[0], batch_size):
            tape = Tape()
            with tape.no_record():
                _, probs = self.forward(tape, x[start:start + batch_size])
            chunks.append(probs.array)
        return np.concatenate(chunks, axis=0)

    def copy(self, role=None):
        net = Network(self.spec, dict(self.params), role or self.role)
        net.history = list(self.history)
        return net

    ##############
    # checkpoints
    ##############
    def to_bytes(self):
        """Serialize spec text and parameters.

        Layout (headers big-endian, payload little-endian float64)::

            magic 'RSCK' | u16 format | u16 role length | role | u32 spec length | spec text
            u32 parameter count | per parameter: u16 name length | name | u8 ndim | u32 dims | payload
            u32 crc32 of everything above
        """
        role = self.role.encode('ascii')
        spec = self.spec.to_text().encode('utf-8')
        frame = bytearray(CKPT_MAGIC)
        frame += struct.pack('>HH', CKPT_FORMAT, len(role)) + role
        frame += struct.pack('>I', len(spec)) + spec
        frame += struct.pack('>I', len(self.params))
        for name in sorted(self.params):
            value = self.params[name]
            raw_name = name.encode('ascii')
            frame += struct.pack('>H', len(raw_name)) + raw_name
            frame += struct.pack('>B', value.ndim) + struct.pack('>%dI' % value.ndim, *value.shape)
            frame += value.array.astype('<f8').tobytes()
        frame += struct.pack('>I', zlib.crc32(bytes(frame)) & 0xFFFFFFFF)
        return bytes(frame)

    @classmethod
    def from_bytes(cls, frame):
        """Rebuild a Network from :meth:`to_bytes` output.

        :raises Network.CheckpointError: on bad magic, version, crc or truncation
        """
        frame = bytes(frame)
        if len(frame) < 12 or frame[:4] != CKPT_MAGIC:
            raise Network.CheckpointError('bad checkpoint magic')
        (crc,) = struct.unpack('>I', frame[-4:])
        if zlib.crc32(frame[:-4]) & 0xFFFFFFFF != crc:
            raise Network.CheckpointError('checkpoint crc mismatch')
        try:
            pos = 4
            version, role_len = struct.unpack_from('>HH', frame, pos)
            pos += 4
            if version != CKPT_FORMAT:
                raise Network.CheckpointError('unsupported checkpoint format %d' % version)
            role = frame[pos:pos + role_len].decode('ascii')
            pos += role_len
            (spec_len,) = struct.unpack_from('>I', frame, pos)
            pos += 4
            spec = NetworkSpec.parse(frame[pos:pos + spec_len].decode('utf-8'))
            pos += spec_len
            (count,) = struct.unpack_from('>I', frame, pos)
            pos += 4
            params = {}
            for _ in range(count):
                (name_len,) = struct.unpack_from('>H', frame, pos)
                pos += 2
                name = frame[pos:pos + name_len].decode('ascii')
                pos += name_len
                (ndim,) = struct.unpack_from('>B', frame, pos)
                pos += 1
                dims = struct.unpack_from('>%dI' % ndim, frame, pos)
                pos += 4 * ndim
                n_bytes = 8 * int(np.prod(dims, dtype=np.int64))
                if pos + n_bytes > len(frame) - 4:
                    raise Network.CheckpointError('checkpoint truncated in parameter %s' % name)
                params[name] = Tensor(np.frombuffer(frame, dtype='<f8', count=n_bytes // 8, offset=pos), dims)
                pos += n_bytes
        except (struct.error, UnicodeDecodeError, ValueError) as e:
            raise Network.CheckpointError('malformed checkpoint (%s)' % e)
        return cls(spec, params, role)

    def save(self, path):
        with open(path, 'wb') as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, 'rb') as f:
            return cls.from_bytes(f.read())


def _build_metadata(spec):
    meta = {'name': spec.name,
            'param_count': spec.param_count(),
            'mult_count': spec.mult_count(),
            'depth': spec.depth(),
            'reported_params': spec.reported_params,
            'reported_mults': spec.reported_mults,
            'param_deviation': None,
            'deviation': False}
    if spec.reported_params:
        deviation = abs(meta['param_count'] - spec.reported_params) / spec.reported_params
        meta['param_deviation'] = deviation
        meta['deviation'] = deviation > PARAM_DEVIATION_TOL
    return meta


def build(spec, seed, role=ROLE_STUDENT):
    """Instantiate a network with fan-in scaled uniform weights and zero biases.

    :param spec: architecture (or its text form)
    :type spec: NetworkSpec
    :param seed: initialization seed
    :type seed: int
    :param role: 'teacher' or 'student'
    :rtype: Network
    :raises Network.ShapeChainError: at the first layer whose shapes do not chain
    """
    if isinstance(spec, str):
        spec = NetworkSpec.parse(spec)
    rng = make_rng(seed)
    params = {}
    for name, shape, fan_in, _ in spec.param_shapes():
        if name.endswith('.b'):
            params[name] = Tensor.zeros(shape)
        else:
            bound = math.sqrt(6.0 / fan_in)
            params[name] = Tensor._from_owned(rng.uniform(-bound, bound, size=shape))
    net = Network(spec, params, role)
    meta = net.metadata
    if meta['deviation']:
        logger.warning('%s: %d parameters deviate %.0f%% from the reported %.6g',
                       spec.name, meta['param_count'], 100 * meta['param_deviation'], meta['reported_params'])
    logger.debug('built %r with seed %d', net, seed)
    return net


def compare(student, teacher):
    """Size and cost of a student against its teacher.

    :type student: Network or NetworkSpec
    :type teacher: Network or NetworkSpec
    :returns: dict with counts, compression ratio and speed-up ratio
    :rtype: dict
    """
    s_spec = student.spec if isinstance(student, Network) else student
    t_spec = teacher.spec if isinstance(teacher, Network) else teacher
    s_params, t_params = s_spec.param_count(), t_spec.param_count()
    s_mults, t_mults = s_spec.mult_count(), t_spec.mult_count()
    return {'student': s_spec.name, 'teacher': t_spec.name,
            'student_depth': s_spec.depth(), 'teacher_depth': t_spec.depth(),
            'student_params': s_params, 'teacher_params': t_params,
            'student_mults': s_mults, 'teacher_mults': t_mults,
            'param_ratio': s_params / t_params,
            'compression': t_params / s_params,
            'speed_up': t_mults / s_mults}


##########
# presets
##########
def _conv(channels):
    return 'maxout-conv 3x3x%d pieces=2 pad=1' % channels


def _pool(size, stride):
    return 'max-pool %dx%d stride=%dx%d' % (size, size, stride, stride)


def _stack(blocks, pool_sizes):
    layers = []
    for channels, (size, stride) in zip(blocks, pool_sizes):
        layers.extend(_conv(c) for c in channels)
        layers.append(_pool(size, stride))
    return layers


_MNIST_POOLS = [(4, 2), (4, 2), (4, 2)]
_CIFAR_TEACHER_POOLS = [(4, 2), (4, 2), (4, 2)]
_CIFAR_STUDENT_POOLS = [(2, 2), (2, 2), (8, 8)]

# name: (input shape, classes, conv blocks, pools, reported params, reported mults)
# cifar-teacher keeps 96 channels in all three blocks rather than widening to
# 96-192-192, so build() warns that it falls short of the reported 9M parameters
_PRESETS = {
    'mnist-teacher': ((1, 28, 28), 10, [[48], [48], [48]], _MNIST_POOLS, 361e3, None),
    'mnist-student': ((1, 28, 28), 10, [[16, 16], [16, 16], [16, 16]], _MNIST_POOLS, 30e3, None),
    'cifar-teacher': ((3, 32, 32), 10, [[96], [96], [96]], _CIFAR_TEACHER_POOLS, 9e6, 725e6),
    'student-1': ((3, 32, 32), 10, [[16, 16, 16], [32, 32, 32], [48, 48, 64]], _CIFAR_STUDENT_POOLS,
                  250e3, 30e6),
    'student-2': ((3, 32, 32), 10, [[16, 32, 32], [48, 64, 80], [96, 96, 128]], _CIFAR_STUDENT_POOLS,
                  862e3, 108e6),
    'student-3': ((3, 32, 32), 10, [[32, 48, 64, 64], [80, 80, 80, 80], [128, 128, 128]], _CIFAR_STUDENT_POOLS,
                  1.6e6, 392e6),
    'student-4': ((3, 32, 32), 10, [[32, 32, 32, 48, 48], [80] * 6, [128] * 6], _CIFAR_STUDENT_POOLS,
                  2.5e6, 382e6),
}

# desk-scale nets for 1 x 8 x 8 toy images and 2-D inputs
_SMALL_PRESETS = {
    'toy-teacher': ((1, 8, 8), 4, [_conv(8), _pool(2, 2), _conv(8), _pool(2, 2)]),
    'toy-student': ((1, 8, 8), 4, [_conv(4), _conv(4), _pool(2, 2), _conv(4), _pool(2, 2)]),
    'tiny-teacher': ((2,), 2, ['maxout-dense 8 pieces=2']),
    'tiny-student': ((2,), 2, ['maxout-dense 4 pieces=2', 'maxout-dense 4 pieces=2']),
}

PRESET_NAMES = tuple(_PRESETS) + tuple(_SMALL_PRESETS)


def preset(name, n_classes=None, input_shape=None):
    """Architecture of a named preset.

    :param name: one of PRESET_NAMES
    :type name: str
    :param n_classes: class count override (100 for the CIFAR-100 variants)
    :type n_classes: int
    :param input_shape: input shape override (desk-scale presets)
    :type input_shape: tuple
    :rtype: NetworkSpec
    """
    if name in _PRESETS:
        shape, classes, blocks, pools, params, mults = _PRESETS[name]
        layers = _stack(blocks, pools)
    elif name in _SMALL_PRESETS:
        shape, classes, layers = _SMALL_PRESETS[name]
        params = mults = None
    else:
        raise ValueError('unknown preset %r (choose from %s)' % (name, ', '.join(PRESET_NAMES)))
    classes = int(n_classes or classes)
    layers = list(layers) + ['dense %d' % classes, 'softmax']
    # reported counts only hold for the original class count
    if classes != (_PRESETS[name][1] if name in _PRESETS else classes):
        params = mults = None
    return NetworkSpec(name, tuple(input_shape or shape), classes, tuple(layers), params, mults)


def build_preset(name, seed, role=ROLE_STUDENT, n_classes=None, input_shape=None):
    """Shortcut for build(preset(name, ...), seed, role)."""
    return build(preset(name, n_classes, input_shape), seed, role)


""" pyRobustStudent autodiff: tape based reverse mode with differentiable backward """

import logging
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass

import numpy as np

from .constants import FD_REL_TOL, FD_SECOND_ORDER_REL_TOL, FD_STEP
from .tensor import Tensor, argmax_flat, conv_index, max_pool as _max_pool_kernel, pad_index
from .utils import relative_error

# add a logger for pyRobustStudent.autodiff
logger = logging.getLogger(__name__)


class Node:
    """ One recorded value of a tape """

    __slots__ = ('tape', 'value', 'op', 'parents', 'requires_grad', 'index', 'fn', 'vjp')

    def __init__(self, tape, value, op, parents=(), requires_grad=False, fn=None, vjp=None):
        self.tape = tape
        self.value = value
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.fn = fn
        self.vjp = vjp
        # set by the tape when the node is recorded
        self.index = None

    def __repr__(self):
        return 'Node(op=%r, index=%s, shape=%s)' % (self.op, self.index, list(self.shape))

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    @property
    def array(self):
        return self.value.array

    @property
    def detached(self):
        return self.index is None

    def item(self):
        return self.value.item()

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only record of elementary operations.

    Nodes are appended in execution order, so parents always precede
    their children. Gradients built by :meth:`backward` with
    ``create_graph=True`` are recorded like any other node and can be
    differentiated again.
    """

    class Error(Exception):
        """ Base exception for Tape related errors. """
        pass

    class NotScalarError(Error):
        """ Exception raise when backward starts from a non-scalar node. """
        pass

    class DetachedError(Error):
        """ Exception raise when a node is not recorded on this tape. """
        pass

    def __init__(self, record=True):
        """Constructor.

        :param record: record operations (False gives a graph-free tape)
        :type record: bool
        """
        self.nodes = []
        self.roots = {}
        self._recording = bool(record)

    def __repr__(self):
        return 'Tape(nodes=%d, roots=%s)' % (len(self.nodes), sorted(self.roots))

    def __len__(self):
        return len(self.nodes)

    @property
    def recording(self):
        return self._recording

    @contextmanager
    def no_record(self):
        """Context where operations compute values without recording nodes."""
        previous = self._recording
        self._recording = False
        try:
            yield self
        finally:
            self._recording = previous

    def _append(self, node):
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def leaf(self, value, name=None, requires_grad=True):
        """Register an input or a parameter.

        :param value: leaf value
        :type value: Tensor or array like
        :param name: registry name (optional)
        :type name: str
        :rtype: Node
        """
        if not isinstance(value, Tensor):
            value = Tensor(value)
        node = Node(self, value, 'leaf', requires_grad=bool(requires_grad))
        if self._recording:
            self._append(node)
            if name is not None:
                self.roots[name] = node
        return node

    def constant(self, value):
        """Record a value that is never differentiated.

        :param value: Tensor, Node (its value is copied by reference) or array like
        :rtype: Node
        """
        if isinstance(value, Node):
            value = value.value
        elif not isinstance(value, Tensor):
            value = Tensor(value)
        node = Node(self, value, 'const')
        if self._recording:
            self._append(node)
        return node

    def root(self, name):
        """Return the leaf registered under name."""
        try:
            return self.roots[name]
        except KeyError:
            raise Tape.DetachedError('no leaf registered as %r' % name)

    def record(self, op, fn, parents, vjp):
        """Evaluate fn on the parent values and record the result.

        :param op: operation tag
        :type op: str
        :param fn: pure function of the parent arrays
        :param parents: parent nodes
        :param vjp: vjp(out, g, needs) returning one gradient node (or None) per parent
        :rtype: Node
        """
        value = Tensor._from_owned(fn(*[p.value.array for p in parents]))
        if not self._recording:
            return Node(self, value, op)
        requires_grad = any(p.requires_grad for p in parents)
        return self._append(Node(self, value, op, parents, requires_grad, fn, vjp))

    def _check_on_tape(self, node, what):
        if not isinstance(node, Node) or node.tape is not self or node.index is None:
            raise Tape.DetachedError('%s is not recorded on this tape' % what)

    def forward(self, fn, *inputs):
        """Evaluate an expression of registered leaves.

        :param fn: callable building the expression from the input nodes
        :param inputs: leaf nodes of this tape
        :returns: the node carrying the expression value
        :rtype: Node
        """
        for i, node in enumerate(inputs):
            self._check_on_tape(node, 'input %d' % i)
        out = fn(*inputs)
        if not isinstance(out, Node):
            out = self.constant(out)
        return out

    def backward(self, root, wrt, create_graph=False):
        """Gradients of a scalar node with respect to some recorded nodes.

        :param root: scalar node
        :type root: Node
        :param wrt: nodes to differentiate against
        :type wrt: iterable of Node
        :param create_graph: record the backward pass so that gradients can be differentiated again
        :type create_graph: bool
        :returns: dict node -> gradient node (same shape as the node)
        :rtype: dict
        """
        self._check_on_tape(root, 'root')
        if root.size != 1:
            raise Tape.NotScalarError('backward root must be scalar, shape is %s' % list(root.shape))
        wrt = list(wrt)
        for i, node in enumerate(wrt):
            self._check_on_tape(node, 'wrt node %d' % i)
        span = self.nodes[:root.index + 1]
        # nodes through which a wrt node influences the root
        reach = set(n.index for n in wrt)
        for node in span:
            if node.index not in reach and any(p.index in reach for p in node.parents):
                reach.add(node.index)
        with nullcontext() if create_graph else self.no_record():
            grads = {}
            if root.index in reach:
                grads[root.index] = self.constant(Tensor.ones(root.shape))
            for node in reversed(span):
                g = grads.get(node.index)
                if g is None or node.vjp is None:
                    continue
                needs = tuple(p.index in reach for p in node.parents)
                if not any(needs):
                    continue
                for parent, pg in zip(node.parents, node.vjp(node, g, needs)):
                    if pg is None or parent.index not in reach:
                        continue
                    prev = grads.get(parent.index)
                    grads[parent.index] = pg if prev is None else add(prev, pg)
            result = {}
            for node in wrt:
                g = grads.get(node.index)
                result[node] = g if g is not None else self.constant(Tensor.zeros(node.shape))
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug('backward from node %d over %d nodes (create_graph=%s)', root.index, len(span), create_graph)
        return result

    def replay(self):
        """Recompute every recorded node from the leaves.

        :returns: largest absolute deviation from the stored values
        :rtype: float
        """
        values = {}
        worst = 0.0
        for node in self.nodes:
            if node.fn is None:
                values[node.index] = node.value.array
                continue
            args = [values.get(p.index, p.value.array) for p in node.parents]
            fresh = np.asarray(node.fn(*args), dtype=np.float64)
            if fresh.shape != node.shape:
                return float('inf')
            if fresh.size:
                worst = max(worst, float(np.max(np.abs(fresh - node.value.array))))
            values[node.index] = fresh
        return worst


###############
# node helpers
###############
def _tape_of(*items):
    tape = None
    for item in items:
        if isinstance(item, Node):
            if tape is None:
                tape = item.tape
            elif item.tape is not tape:
                raise Tape.DetachedError('operands belong to different tapes')
    if tape is None:
        raise TypeError('at least one operand must be a Node')
    return tape


def _lift(tape, item):
    return item if isinstance(item, Node) else tape.constant(item)


def _pair(a, b):
    tape = _tape_of(a, b)
    return tape, _lift(tape, a), _lift(tape, b)


def _sum_to_array(array, shape):
    shape = tuple(shape)
    extra = array.ndim - len(shape)
    if extra:
        array = array.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (have, want) in enumerate(zip(array.shape, shape)) if want == 1 and have != 1)
    if axes:
        array = array.sum(axis=axes, keepdims=True)
    return array


def _keep_shape(shape, axis):
    if axis is None:
        return (1,) * len(shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = [a % len(shape) for a in axes]
    return tuple(1 if i in axes else e for i, e in enumerate(shape))


######################
# elementary operations
######################
def add(a, b):
    tape, a, b = _pair(a, b)

    def vjp(out, g, needs):
        return [sum_to(g, a.shape) if needs[0] else None,
                sum_to(g, b.shape) if needs[1] else None]

    return tape.record('add', np.add, (a, b), vjp)


def sub(a, b):
    tape, a, b = _pair(a, b)

    def vjp(out, g, needs):
        return [sum_to(g, a.shape) if needs[0] else None,
                neg(sum_to(g, b.shape)) if needs[1] else None]

    return tape.record('sub', np.subtract, (a, b), vjp)


def mul(a, b):
    tape, a, b = _pair(a, b)

    def vjp(out, g, needs):
        return [sum_to(mul(g, b), a.shape) if needs[0] else None,
                sum_to(mul(g, a), b.shape) if needs[1] else None]

    return tape.record('mul', np.multiply, (a, b), vjp)


def div(a, b):
    tape, a, b = _pair(a, b)

    def vjp(out, g, needs):
        return [sum_to(div(g, b), a.shape) if needs[0] else None,
                sum_to(neg(mul(g, div(out, b))), b.shape) if needs[1] else None]

    return tape.record('div', np.divide, (a, b), vjp)


def neg(a):
    tape = _tape_of(a)
    return tape.record('neg', np.negative, (a,), lambda out, g, needs: [neg(g)])


def scale(a, factor):
    """Multiply a node by a python float."""
    tape = _tape_of(a)
    factor = float(factor)
    return tape.record('scale', lambda x: x * factor, (a,), lambda out, g, needs: [scale(g, factor)])


def exp(a):
    tape = _tape_of(a)
    return tape.record('exp', np.exp, (a,), lambda out, g, needs: [mul(g, out)])


def log(a):
    tape = _tape_of(a)
    if np.any(a.array <= 0.0):
        raise ValueError('log of a non-positive value')
    return tape.record('log', np.log, (a,), lambda out, g, needs: [div(g, a)])


def matmul(a, b):
    """Product of two 2-D nodes."""
    tape, a, b = _pair(a, b)
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise Tensor.ShapeError('matmul shape mismatch: %s x %s' % (list(a.shape), list(b.shape)))

    def vjp(out, g, needs):
        return [matmul(g, transpose(b)) if needs[0] else None,
                matmul(transpose(a), g) if needs[1] else None]

    return tape.record('matmul', np.matmul, (a, b), vjp)


def reshape(a, shape):
    tape = _tape_of(a)
    shape = tuple(int(e) for e in shape)
    if shape == a.shape:
        return a
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise Tensor.ShapeError('cannot reshape %s to %s' % (list(a.shape), list(shape)))
    return tape.record('reshape', lambda x: x.reshape(shape), (a,),
                       lambda out, g, needs: [reshape(g, a.shape)])


def transpose(a, axes=None):
    tape = _tape_of(a)
    axes = tuple(reversed(range(len(a.shape)))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return tape.record('transpose', lambda x: np.transpose(x, axes), (a,),
                       lambda out, g, needs: [transpose(g, inverse)])


def broadcast_to(a, shape):
    tape = _tape_of(a)
    shape = tuple(shape)
    if shape == a.shape:
        return a
    return tape.record('broadcast_to', lambda x: np.array(np.broadcast_to(x, shape)), (a,),
                       lambda out, g, needs: [sum_to(g, a.shape)])


def sum_to(a, shape):
    """Sum a node down to a shape it was broadcast from."""
    tape = _tape_of(a)
    shape = tuple(shape)
    if shape == a.shape:
        return a
    return tape.record('sum_to', lambda x: _sum_to_array(x, shape), (a,),
                       lambda out, g, needs: [broadcast_to(g, a.shape)])


def reduce_sum(a, axis=None, keepdims=False):
    tape = _tape_of(a)
    if axis is not None and not -len(a.shape) <= axis < len(a.shape):
        raise Tensor.AxisError('axis %d out of range for shape %s' % (axis, list(a.shape)))
    kshape = _keep_shape(a.shape, axis)

    def vjp(out, g, needs):
        return [broadcast_to(reshape(g, kshape), a.shape)]

    return tape.record('reduce_sum', lambda x: np.asarray(np.sum(x, axis=axis, keepdims=keepdims)), (a,), vjp)


def reduce_max(a, axis=None, keepdims=False):
    """Maximum along axis; the gradient flows to the first maximum only."""
    _tape_of(a)
    if axis is None:
        index = np.asarray(np.argmax(a.array.reshape(-1)))
        out = take(a, index.reshape(()))
        return reshape(out, (1,) * len(a.shape)) if keepdims else out
    if not -len(a.shape) <= axis < len(a.shape):
        raise Tensor.AxisError('axis %d out of range for shape %s' % (axis, list(a.shape)))
    index = argmax_flat(a.array, axis % len(a.shape))
    out = take(a, index)
    return reshape(out, _keep_shape(a.shape, axis)) if keepdims else out


def take(a, index):
    """Gather a flat view of a at integer indices; output has the index shape."""
    tape = _tape_of(a)
    index = np.asarray(index, dtype=np.int64)
    return tape.record('take', lambda x: x.reshape(-1)[index], (a,),
                       lambda out, g, needs: [scatter(g, index, a.shape)])


def scatter(a, index, shape):
    """Scatter-add the values of a at flat indices of a zero tensor of shape."""
    tape = _tape_of(a)
    index = np.asarray(index, dtype=np.int64)
    shape = tuple(shape)
    if index.shape != a.shape:
        raise Tensor.ShapeError('scatter index shape %s does not match values %s' % (list(index.shape), list(a.shape)))
    size = int(np.prod(shape, dtype=np.int64))
    flat_index = index.reshape(-1)

    def fn(x):
        return np.bincount(flat_index, weights=x.reshape(-1), minlength=size).reshape(shape)

    return tape.record('scatter', fn, (a,), lambda out, g, needs: [take(g, index)])


######################
# composite operations
######################
def square(a):
    return mul(a, a)


def relu(a):
    tape = _tape_of(a)
    return mul(a, tape.constant((a.array > 0.0).astype(np.float64)))


def log_softmax(a, axis=-1):
    tape = _tape_of(a)
    shift = tape.constant(np.max(a.array, axis=axis, keepdims=True))
    shifted = sub(a, shift)
    return sub(shifted, log(reduce_sum(exp(shifted), axis=axis, keepdims=True)))


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis))


def pad2d(a, padding):
    """Zero padding of the two trailing axes of a (N x) C x H x W node."""
    if padding == 0:
        return a
    shape = a.shape
    lead = int(np.prod(shape[:-2], dtype=np.int64))
    index, (_, hp, wp) = pad_index((lead, shape[-2], shape[-1]), int(padding))
    flat = scatter(reshape(a, (a.size,)), index, (lead * hp * wp,))
    return reshape(flat, shape[:-2] + (hp, wp))


def conv2d(x, kernels, bias, padding=0):
    """Batched cross-correlation (N x C x H x W input) plus per-channel bias.

    Columns are gathered with a constant index map, so the whole layer is
    made of take, matmul, reshape, transpose and add nodes.
    """
    tape = _tape_of(x, kernels, bias)
    x, kernels, bias = _lift(tape, x), _lift(tape, kernels), _lift(tape, bias)
    if len(x.shape) != 4 or len(kernels.shape) != 4 or x.shape[1] != kernels.shape[1]:
        raise Tensor.ShapeError('conv2d shape mismatch: input %s, kernels %s' % (list(x.shape), list(kernels.shape)))
    c_out, c_in, kh, kw = kernels.shape
    if bias.shape != (c_out,):
        raise Tensor.ShapeError('conv2d bias shape %s, expected %s' % (list(bias.shape), [c_out]))
    x = pad2d(x, padding)
    n, _, h, w = x.shape
    index = conv_index((c_in, h, w), kh, kw)
    ho, wo = h - kh + 1, w - kw + 1
    offsets = (np.arange(n, dtype=np.int64) * (c_in * h * w)).reshape(1, n, 1)
    batch_index = (index[:, np.newaxis, :] + offsets).reshape(index.shape[0], n * ho * wo)
    cols = take(x, batch_index)
    out = matmul(reshape(kernels, (c_out, c_in * kh * kw)), cols)
    out = transpose(reshape(out, (c_out, n, ho, wo)), (1, 0, 2, 3))
    return add(out, reshape(bias, (1, c_out, 1, 1)))


def max_pool(x, window, stride=None):
    """Batched max pooling; the gradient is routed to the window argmax."""
    _tape_of(x)
    if len(x.shape) != 4:
        raise Tensor.ShapeError('max_pool needs N x C x H x W input, got %s' % list(x.shape))
    _, index = _max_pool_kernel(x.value, window, stride)
    return take(x, index)


def dense(x, weights, bias):
    """Affine map of a batch: x (N x D) @ weights.T (D x U) + bias."""
    tape = _tape_of(x, weights, bias)
    x, weights, bias = _lift(tape, x), _lift(tape, weights), _lift(tape, bias)
    return add(matmul(x, transpose(weights)), reshape(bias, (1, bias.size)))


##################
# gradient checks
##################
@dataclass
class CheckReport:
    """ Outcome of a gradient comparison """
    analytic: list
    numeric: list
    relative_error: float
    tolerance: float

    @property
    def passed(self):
        return self.relative_error <= self.tolerance


def finite_difference(fn, x, step=FD_STEP):
    """Central finite differences of a scalar function of an array.

    :param fn: callable array -> float
    :param x: evaluation point
    :type x: numpy.ndarray
    :param step: difference step
    :type step: float
    :rtype: numpy.ndarray
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x, flat_g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat_x.size):
        saved = flat_x[i]
        flat_x[i] = saved + step
        up = float(fn(x.copy()))
        flat_x[i] = saved - step
        down = float(fn(x.copy()))
        flat_x[i] = saved
        flat_g[i] = (up - down) / (2.0 * step)
    return grad


def _value_of(fn, arrays, slot, x):
    tape = Tape()
    with tape.no_record():
        nodes = [tape.leaf(x if i == slot else a) for i, a in enumerate(arrays)]
        return fn(*nodes).item()


def gradient_check(fn, *arrays, step=FD_STEP, tol=FD_REL_TOL):
    """Compare backward gradients of fn against central finite differences.

    :param fn: callable building a scalar node from one node per array
    :param arrays: evaluation point, one array per input
    :returns: report with the worst relative error over the inputs
    :rtype: CheckReport
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tape = Tape()
    leaves = [tape.leaf(a) for a in arrays]
    grads = tape.backward(tape.forward(fn, *leaves), leaves)
    analytic = [grads[leaf].array.copy() for leaf in leaves]
    numeric = [finite_difference(lambda x, slot=i: _value_of(fn, arrays, slot, x), a, step)
               for i, a in enumerate(arrays)]
    worst = max(relative_error(a, n) for a, n in zip(analytic, numeric))
    return CheckReport(analytic, numeric, worst, tol)


def _input_gradient_norm(f, x, theta):
    tape = Tape()
    x_node, theta_node = tape.leaf(x), tape.leaf(theta)
    g = tape.backward(f(x_node, theta_node), [x_node])[x_node]
    return float(np.sum(g.array ** 2))


def grad_of_grad_check(f, x, theta, step=FD_STEP, tol=FD_SECOND_ORDER_REL_TOL):
    """Check d/dtheta ||df/dx||^2 from a double backward against finite differences.

    :param f: callable (x node, theta node) -> scalar node
    :param x: input point
    :param theta: parameter point
    :rtype: CheckReport
    """
    x = np.array(x, dtype=np.float64)
    theta = np.array(theta, dtype=np.float64)
    tape = Tape()
    x_node, theta_node = tape.leaf(x), tape.leaf(theta)
    g = tape.backward(f(x_node, theta_node), [x_node], create_graph=True)[x_node]
    norm = reduce_sum(square(g))
    analytic = tape.backward(norm, [theta_node])[theta_node].array.copy()
    numeric = finite_difference(lambda t: _input_gradient_norm(f, x, t), theta, step)
    report = CheckReport([analytic], [numeric], relative_error(analytic, numeric), tol)
    if not report.passed:
        logger.warning('second order check failed: relative error %.3g > %.3g', report.relative_error, tol)
    return report

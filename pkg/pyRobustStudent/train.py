""" pyRobustStudent train: SGD with momentum, teacher and student training, evaluation """

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape
from .constants import (DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LR_CONV,
                        DEFAULT_LR_LINEAR, DEFAULT_MOMENTUM, METHOD_KD,
                        METHOD_MIMIC, METHOD_PLAIN, METHOD_ROBUST,
                        METHOD_TEACHER, ROLE_STUDENT, ROLE_TEACHER,
                        TOY_LR_SCALE, TRAIN_METHODS)
from .data import augment_flip
from .losses import (LossConfig, TeacherTargets, cross_entropy_logits,
                     loss_terms, teacher_targets)
from .nn import Network, NetworkSpec, build, compare
from .perturb import perturb_batch
from .tensor import Tensor
from .utils import derive_seed, make_rng

# add a logger for pyRobustStudent.train
logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """ Optimizer and schedule settings of one training run """
    loss: LossConfig = field(default_factory=LossConfig)
    lr_linear: float = DEFAULT_LR_LINEAR
    lr_conv: float = DEFAULT_LR_CONV
    momentum: float = DEFAULT_MOMENTUM
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0
    method: str = METHOD_ROBUST
    # random horizontal flips of every batch
    augment: bool = False

    def __post_init__(self):
        self.lr_linear, self.lr_conv = float(self.lr_linear), float(self.lr_conv)
        self.momentum = float(self.momentum)
        self.batch_size, self.epochs, self.seed = int(self.batch_size), int(self.epochs), int(self.seed)
        if not (self.lr_linear > 0 and self.lr_conv > 0):
            raise ValueError('learning rates out of range (must be > 0)')
        if not 0 <= self.momentum < 1:
            raise ValueError('momentum out of range (must be in [0, 1))')
        if self.batch_size < 1:
            raise ValueError('batch_size out of range (must be >= 1)')
        if self.epochs < 0:
            raise ValueError('epochs out of range (must be >= 0)')
        if self.seed < 0:
            raise ValueError('seed out of range (must be >= 0)')
        if self.method not in TRAIN_METHODS + (METHOD_TEACHER,):
            raise ValueError('unknown method %r' % self.method)

    @classmethod
    def desk_scale(cls, **kwargs):
        """Config with both learning rates scaled down for desk-scale nets."""
        kwargs.setdefault('lr_linear', DEFAULT_LR_LINEAR * TOY_LR_SCALE)
        kwargs.setdefault('lr_conv', DEFAULT_LR_CONV * TOY_LR_SCALE)
        return cls(**kwargs)

    @property
    def uses_teacher(self):
        return self.method in (METHOD_ROBUST, METHOD_KD, METHOD_MIMIC)

    def active_loss(self):
        """Loss settings with the terms the method does not use switched off.

        robust keeps every term, kd drops the gradient and score terms, mimic
        also swaps the softened term for the output distance, plain keeps the
        hard-label term only.
        """
        if self.method == METHOD_ROBUST:
            return self.loss
        if self.method == METHOD_KD:
            return replace(self.loss, c1=0.0, c2=0.0, mimic=False)
        if self.method == METHOD_MIMIC:
            return replace(self.loss, c1=0.0, c2=0.0, mimic=True)
        return replace(self.loss, lam=0.0, c1=0.0, c2=0.0, mimic=False)

    def lr(self, group):
        return self.lr_conv if group == 'conv' else self.lr_linear


@dataclass
class TrainState:
    """ Parameters, velocities and progress of a training run """
    params: dict
    velocity: dict
    groups: dict
    epoch: int = 0
    steps: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def start(cls, net):
        params = {name: np.array(value.array) for name, value in net.params.items()}
        velocity = {name: np.zeros_like(value) for name, value in params.items()}
        groups = {name: net.param_group(name) for name in params}
        return cls(params, velocity, groups)

    def tensors(self):
        return {name: Tensor._from_owned(value.copy()) for name, value in self.params.items()}


def sgd_momentum_step(state, grads, cfg):
    """One update: v <- m * v - lr * g then theta <- theta + v.

    :param state: parameters and velocities (updated in place)
    :type state: TrainState
    :param grads: name -> gradient array, one per parameter
    :type grads: dict
    :param cfg: momentum and per-group learning rates
    :type cfg: TrainConfig
    :returns: state
    :rtype: TrainState
    """
    if set(grads) != set(state.params):
        raise Tensor.ShapeError('gradients for %s, parameters %s' % (sorted(grads), sorted(state.params)))
    for name, theta in state.params.items():
        g = np.asarray(grads[name].array if isinstance(grads[name], Tensor) else grads[name], dtype=np.float64)
        if g.shape != theta.shape:
            raise Tensor.ShapeError('gradient of %s has shape %s, expected %s'
                                    % (name, list(g.shape), list(theta.shape)))
        v = state.velocity[name]
        v *= cfg.momentum
        v -= cfg.lr(state.groups.get(name, 'linear')) * g
        theta += v
    state.steps += 1
    return state


@dataclass
class Metrics:
    """ Evaluation summary of a network on a dataset """
    accuracy: float
    mean_score: float
    per_class_accuracy: list
    n: int
    condition: str = 'clean'

    def as_dict(self):
        return {'accuracy': self.accuracy, 'mean_score': self.mean_score,
                'per_class_accuracy': self.per_class_accuracy, 'n': self.n, 'condition': self.condition}


class Trainer:
    """ Minibatch training loop of one network """

    class Error(Exception):
        """ Base exception for Trainer related errors. """
        pass

    class NumericError(Error):
        """ Exception raise when the loss or an update is not finite. """
        pass

    class ClassCountError(Error):
        """ Exception raise when teacher, student and dataset class counts differ. """
        pass

    def __init__(self, net, cfg, teacher=None, on_epoch=None):
        """Constructor.

        :param net: network to train (updated in place)
        :type net: Network
        :param cfg: training settings
        :type cfg: TrainConfig
        :param teacher: frozen teacher (distillation methods)
        :type teacher: Network
        :param on_epoch: called with every epoch record
        :type on_epoch: callable
        """
        if net.frozen:
            raise Trainer.Error('network %s is frozen' % net.spec.name)
        if cfg.uses_teacher:
            if teacher is None:
                raise Trainer.Error('method %s needs a teacher' % cfg.method)
            if not teacher.frozen:
                raise Trainer.Error('teacher %s must be frozen before distillation' % teacher.spec.name)
            if teacher.n_classes != net.n_classes:
                raise Trainer.ClassCountError('teacher has %d classes, student %d'
                                              % (teacher.n_classes, net.n_classes))
        self.net = net
        self.cfg = cfg
        self.teacher = teacher if cfg.uses_teacher else None
        self.loss_cfg = cfg.active_loss()
        self.on_epoch = on_epoch
        self.state = TrainState.start(net)

    def __repr__(self):
        return 'Trainer(net=%r, method=%r)' % (self.net, self.cfg.method)

    def _targets(self, images, labels):
        with_grads = self.loss_cfg.c1 > 0
        chunks = [teacher_targets(self.teacher, images[s:s + self.cfg.batch_size], labels[s:s + self.cfg.batch_size],
                                  self.loss_cfg.tau, with_grads)
                  for s in range(0, len(labels), self.cfg.batch_size)]
        return TeacherTargets(np.concatenate([c.logits for c in chunks]),
                              np.concatenate([c.probs for c in chunks]),
                              np.concatenate([c.scores for c in chunks]),
                              np.concatenate([c.grads for c in chunks]) if with_grads else None)

    @staticmethod
    def _slice(targets, index):
        return TeacherTargets(targets.logits[index], targets.probs[index], targets.scores[index],
                              None if targets.grads is None else targets.grads[index])

    def _step(self, x, y, targets):
        """Loss terms, gradients and update of one batch."""
        tape = Tape()
        if self.teacher is None:
            logits, _ = self.net.forward(tape, tape.constant(x))
            total = cross_entropy_logits(logits, y)
            values = {'loss': total.item(), 'kd': total.item(), 'g': 0.0, 's': 0.0, 'margin': 0.0}
        else:
            terms = loss_terms(self.net, self.teacher, x, y, self.loss_cfg, tape, targets)
            total = terms.total
            values = terms.values()
        if not np.isfinite(values['loss']):
            raise Trainer.NumericError('non-finite loss %r' % values)
        params = self.net.bind(tape)
        grads = tape.backward(total, list(params.values()))
        sgd_momentum_step(self.state, {name: grads[node].array for name, node in params.items()}, self.cfg)
        self.net.set_params(self.state.tensors())
        return values

    def run(self, dataset, validation=None):
        """Train for cfg.epochs epochs of shuffled minibatches.

        :param dataset: training set
        :type dataset: Dataset
        :param validation: validation set scored after every epoch (optional)
        :type validation: Dataset
        :returns: the trained network
        :rtype: Network
        :raises Trainer.NumericError: on a non-finite loss or update
        """
        if len(dataset) == 0:
            raise Trainer.Error('empty training set')
        if dataset.n_classes != self.net.n_classes:
            raise Trainer.ClassCountError('dataset has %d classes, network %s %d'
                                          % (dataset.n_classes, self.net.spec.name, self.net.n_classes))
        images, labels = dataset.images.array, dataset.labels
        cached = None
        if self.teacher is not None and not self.cfg.augment:
            cached = self._targets(images, labels)
        for epoch in range(self.cfg.epochs):
            order = make_rng(derive_seed(self.cfg.seed, epoch)).permutation(len(labels))
            sums = dict.fromkeys(('loss', 'kd', 'g', 's', 'margin'), 0.0)
            for b, start in enumerate(range(0, len(labels), self.cfg.batch_size)):
                index = order[start:start + self.cfg.batch_size]
                x, y = images[index], labels[index]
                if self.cfg.augment:
                    x = augment_flip(x, derive_seed(self.cfg.seed, ((epoch + 1) << 20) | b)).array
                targets = None
                if self.teacher is not None:
                    targets = self._slice(cached, index) if cached is not None else \
                        teacher_targets(self.teacher, x, y, self.loss_cfg.tau, self.loss_cfg.c1 > 0)
                try:
                    values = self._step(x, y, targets)
                except Tensor.NonFiniteError as e:
                    raise Trainer.NumericError('%s: non-finite value at epoch %d batch %d (%s)'
                                               % (self.net.spec.name, epoch + 1, b, e)) from e
                except Trainer.NumericError as e:
                    raise Trainer.NumericError('%s: epoch %d batch %d: %s'
                                               % (self.net.spec.name, epoch + 1, b, e)) from e
                for key in sums:
                    sums[key] += values[key] * len(index)
                if logger.isEnabledFor(logging.DEBUG):
                    logger.debug('epoch %d batch %d loss %.6g', epoch + 1, b, values['loss'])
            self.state.epoch = epoch + 1
            record = {'epoch': epoch + 1, 'method': self.cfg.method}
            record.update({key: value / len(labels) for key, value in sums.items()})
            try:
                record['train_accuracy'] = evaluate(self.net, dataset).accuracy
                record['val_accuracy'] = evaluate(self.net, validation).accuracy if validation is not None else None
            except Tensor.NonFiniteError as e:
                raise Trainer.NumericError('%s: non-finite output after epoch %d (%s)'
                                           % (self.net.spec.name, epoch + 1, e)) from e
            self.state.history.append(record)
            self.net.history.append(record)
            logger.info('%s %s epoch %d/%d loss %.6g train acc %.4f', self.net.spec.name, self.cfg.method,
                        epoch + 1, self.cfg.epochs, record['loss'], record['train_accuracy'])
            if self.on_epoch is not None:
                self.on_epoch(record)
        return self.net


def _network(spec, seed, role):
    if isinstance(spec, Network):
        return spec
    if isinstance(spec, (str, NetworkSpec)):
        return build(spec, seed, role)
    raise TypeError('spec must be a NetworkSpec, its text or a Network')


def train_teacher(spec, dataset, cfg, validation=None, on_epoch=None):
    """Train a teacher with plain cross-entropy and freeze it.

    :param spec: architecture (or an initialized network)
    :type spec: NetworkSpec
    :type dataset: Dataset
    :type cfg: TrainConfig
    :returns: frozen teacher, final training accuracy in metadata
    :rtype: Network
    """
    net = _network(spec, cfg.seed, ROLE_TEACHER)
    net.role = ROLE_TEACHER
    Trainer(net, replace(cfg, method=METHOD_PLAIN), on_epoch=on_epoch).run(dataset, validation)
    net.metadata['train_accuracy'] = evaluate(net, dataset).accuracy
    logger.info('teacher %s trained, train accuracy %.4f', net.spec.name, net.metadata['train_accuracy'])
    return net.freeze()


def train_student(spec, teacher, dataset, cfg, validation=None, on_epoch=None):
    """Train a student against a frozen teacher with the loss of cfg.method.

    :param spec: architecture (or an initialized network)
    :type spec: NetworkSpec
    :param teacher: frozen teacher (unused by the plain method)
    :type teacher: Network
    :type dataset: Dataset
    :type cfg: TrainConfig
    :returns: trained student with its metric history, the student to teacher
              parameter ratio in metadata when a teacher is given
    :rtype: Network
    :raises Trainer.ClassCountError: when class counts differ
    :raises Trainer.NumericError: on a non-finite loss
    """
    net = _network(spec, cfg.seed, ROLE_STUDENT)
    Trainer(net, cfg, teacher, on_epoch).run(dataset, validation)
    net.metadata['train_accuracy'] = evaluate(net, dataset).accuracy
    net.metadata['method'] = cfg.method
    if teacher is not None:
        net.metadata['teacher'] = teacher.spec.name
        net.metadata['param_ratio'] = compare(net, teacher)['param_ratio']
    return net


def _perturbed(dataset, perturbation, seed):
    if perturbation is None:
        return dataset.images.array
    spec = perturbation if seed is None else replace(perturbation, seed=seed)
    return perturb_batch(dataset.images, spec).array


def evaluate(net, dataset, perturbation=None, seed=None):
    """Accuracy and mean true-label score, optionally under a perturbation.

    Ties between class probabilities go to the lowest class index.

    :type net: Network
    :type dataset: Dataset
    :param perturbation: corruption applied to every input (optional)
    :type perturbation: PerturbationSpec
    :param seed: overrides perturbation.seed
    :type seed: int
    :rtype: Metrics
    """
    probs = net.predict(_perturbed(dataset, perturbation, seed))
    labels = dataset.labels
    hits = np.argmax(probs, axis=1) == labels
    per_class = []
    for c in range(dataset.n_classes):
        members = labels == c
        per_class.append(float(hits[members].mean()) if members.any() else None)
    condition = perturbation.condition if perturbation is not None else 'clean'
    return Metrics(float(hits.mean()), float(probs[np.arange(labels.size), labels].mean()),
                   per_class, int(labels.size), condition)


def prediction_scores(net, dataset, indices, perturbation=None, seed=None):
    """Class probability vectors of chosen examples.

    :returns: len(indices) x k array
    :rtype: numpy.ndarray
    """
    chosen = dataset.subset(indices)
    return net.predict(_perturbed(chosen, perturbation, seed))


def loss_gradient_gap(net_S, net_T, dataset, tau):
    """Mean squared input-gradient gap of the softened scores over a dataset."""
    cfg = LossConfig(tau=tau, lam=0.0, c1=1.0, c2=0.0)
    total = 0.0
    for x, y in dataset.batches(DEFAULT_BATCH_SIZE):
        tape = Tape()
        terms = loss_terms(net_S, net_T, x, y, cfg, tape)
        total += terms.gradient.item() * len(y)
    return total / len(dataset)

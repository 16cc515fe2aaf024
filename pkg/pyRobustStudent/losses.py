""" pyRobustStudent losses: distillation, score margin and gradient matching objectives """

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .constants import (DEFAULT_C1, DEFAULT_C2, DEFAULT_GAMMA, DEFAULT_LAMBDA,
                        DEFAULT_TAU)
from .nn import softened_score, true_label_score

# add a logger for pyRobustStudent.losses
logger = logging.getLogger(__name__)


@dataclass
class LossConfig:
    """ Loss hyper-parameters """
    tau: float = DEFAULT_TAU
    lam: float = DEFAULT_LAMBDA
    gamma: float = DEFAULT_GAMMA
    c1: float = DEFAULT_C1
    c2: float = DEFAULT_C2
    # replace the softened-output term by the squared output distance
    mimic: bool = False

    def __post_init__(self):
        self.tau, self.lam, self.gamma = float(self.tau), float(self.lam), float(self.gamma)
        self.c1, self.c2 = float(self.c1), float(self.c2)
        if not self.tau > 0:
            raise ValueError('tau out of range (must be > 0)')
        if not self.gamma > 0:
            raise ValueError('gamma out of range (must be > 0)')
        if self.lam < 0 or self.c1 < 0 or self.c2 < 0:
            raise ValueError('lambda, C1 and C2 must be >= 0')


@dataclass
class TeacherTargets:
    """ Frozen teacher outputs for one batch """
    logits: np.ndarray
    probs: np.ndarray
    scores: np.ndarray
    grads: np.ndarray = None


@dataclass
class LossTerms:
    """ Breakdown of the objective of one batch (unused terms are None) """
    kd: Node
    gradient: Node = None
    score: Node = None
    total: Node = None
    margin: float = 0.0

    def values(self):
        """Term values as floats (0.0 for unused terms)."""
        return {'loss': self.total.item(),
                'kd': self.kd.item(),
                'g': self.gradient.item() if self.gradient is not None else 0.0,
                's': self.score.item() if self.score is not None else 0.0,
                'margin': self.margin}


def _mean(node):
    return ad.scale(ad.reduce_sum(node), 1.0 / node.size)


def _batch_mean(node, n):
    return ad.scale(ad.reduce_sum(node), 1.0 / n)


def _on_tape(value):
    """Nodes stay as they are, other values go on a fresh graph-free tape."""
    if isinstance(value, Node):
        return value, False
    return Tape(record=False).leaf(value), True


#########################
# elementary objectives
#########################
def cross_entropy(o, y):
    """Mean of -log o[y] over the batch.

    :param o: class probabilities (k,) or (N, k)
    :param y: label(s)
    :returns: scalar Node (float when o is not a Node)
    :raises ValueError: if a true-label probability is not positive
    """
    o, raw = _on_tape(o)
    p = true_label_score(o, y)
    if np.any(p.array <= 0.0):
        raise ValueError('true label probability is not positive, cross-entropy is infinite')
    loss = ad.neg(_mean(ad.log(p)))
    return loss.item() if raw else loss


def cross_entropy_logits(a, y):
    """Mean of -log softmax(a)[y], computed in the log domain.

    :param a: logits (k,) or (N, k)
    :rtype: Node
    """
    a, raw = _on_tape(a)
    loss = ad.neg(_mean(true_label_score(ad.log_softmax(a, axis=-1), y)))
    return loss.item() if raw else loss


def soften(a, tau):
    """softmax(a / tau).

    :param a: logits
    :param tau: temperature (> 0)
    :type tau: float
    :returns: Node for a Node, Tensor otherwise
    """
    if not tau > 0:
        raise ValueError('tau out of range (must be > 0)')
    a, raw = _on_tape(a)
    out = ad.softmax(ad.scale(a, 1.0 / tau), axis=-1)
    return out.value if raw else out


def _soft_cross_entropy(a_S, a_T, tau):
    # teacher soft targets are constants
    p_T = a_S.tape.constant(soften(a_T, tau))
    log_p_S = ad.log_softmax(ad.scale(a_S, 1.0 / tau), axis=-1)
    n = a_S.shape[0] if len(a_S.shape) == 2 else 1
    return ad.neg(_batch_mean(ad.mul(p_T, log_p_S), n))


def kd_loss(o_S, a_S, o_T, a_T, y, cfg):
    """Hard-label cross-entropy plus lam times the softened cross-entropy.

    H(o_S, y) + lam * H(soften(a_S, tau), soften(a_T, tau)) with the teacher
    side as fixed target. The hard term is taken from a_S when given.

    :type cfg: LossConfig
    :rtype: Node
    """
    if a_S is not None:
        a_S, raw = _on_tape(a_S)
        hard = cross_entropy_logits(a_S, y)
    else:
        o_S, raw = _on_tape(o_S)
        hard = cross_entropy(o_S, y)
    if cfg.lam == 0:
        return hard.item() if raw else hard
    if a_S is None:
        raise ValueError('student logits are needed for the softened term')
    a_T = a_T.value if isinstance(a_T, Node) else a_T
    loss = ad.add(hard, ad.scale(_soft_cross_entropy(a_S, a_T, cfg.tau), cfg.lam))
    return loss.item() if raw else loss


def mimic_loss(o_S, o_T, y, lam):
    """H(o_S, y) + lam/2 * ||o_S - o_T||^2 (mean over the batch).

    :rtype: Node
    """
    o_S, raw = _on_tape(o_S)
    hard = cross_entropy(o_S, y)
    if lam == 0:
        return hard.item() if raw else hard
    o_T = o_S.tape.constant(o_T.value if isinstance(o_T, Node) else o_T)
    n = o_S.shape[0] if len(o_S.shape) == 2 else 1
    gap = _batch_mean(ad.square(ad.sub(o_S, o_T)), n)
    loss = ad.add(hard, ad.scale(gap, 0.5 * lam))
    return loss.item() if raw else loss


def score_margin_loss(f_S, f_T, gamma):
    """Mean over the batch of max(0, gamma + f_T - f_S).

    :param f_S: student true-label scores
    :param f_T: teacher true-label scores (held constant)
    :param gamma: margin (> 0)
    :type gamma: float
    :returns: scalar Node (float when f_S is not a Node)
    """
    if not gamma > 0:
        raise ValueError('gamma out of range (must be > 0)')
    if not isinstance(f_S, Node) and np.size(f_S) == 0:
        raise ValueError('score margin loss of an empty batch')
    f_S, raw = _on_tape(np.atleast_1d(np.asarray(f_S, dtype=np.float64)) if not isinstance(f_S, Node) else f_S)
    f_T = np.asarray(f_T.value.array if isinstance(f_T, Node) else f_T, dtype=np.float64)
    if f_T.size == 0:
        raise ValueError('score margin loss of an empty batch')
    f_T = f_T.reshape(f_S.shape)
    hinge = ad.relu(ad.sub(f_S.tape.constant(f_T + gamma), f_S))
    loss = _mean(hinge)
    return loss.item() if raw else loss


def _gradient_gap(tape, x_leaf, score_S, g_T):
    g_S = tape.backward(ad.reduce_sum(score_S), [x_leaf], create_graph=True)[x_leaf]
    diff = ad.sub(g_S, tape.constant(g_T))
    n = score_S.shape[0] if len(score_S.shape) == 1 else 1
    return _batch_mean(ad.square(diff), n)


def input_gradients(net, x, y, tau):
    """Gradient of the softened true-label score with respect to each input.

    :returns: array shaped like x
    :rtype: numpy.ndarray
    """
    tape = Tape()
    x_leaf = tape.leaf(x)
    score = net.score(tape, x_leaf, y, tau)
    return tape.backward(ad.reduce_sum(score), [x_leaf])[x_leaf].array.copy()


def gradient_match_loss(net_S, net_T, x, y, cfg, tape, teacher_grads=None):
    """Mean over the batch of the squared input-gradient gap of the softened scores.

    The student gradient is built with a recorded backward, so the result
    is differentiable with respect to the student parameters.

    :param teacher_grads: precomputed teacher input gradients (optional)
    :rtype: Node
    """
    if teacher_grads is None:
        teacher_grads = input_gradients(net_T, x, y, cfg.tau)
    x_leaf = tape.leaf(x)
    score_S = net_S.score(tape, x_leaf, y, cfg.tau)
    return _gradient_gap(tape, x_leaf, score_S, teacher_grads)


##################
# full objective
##################
def teacher_targets(net_T, x, y, tau, with_grads=True):
    """Teacher logits, probabilities, raw scores and input gradients for a batch.

    :rtype: TeacherTargets
    """
    tape = Tape()
    with tape.no_record():
        logits, probs = net_T.forward(tape, x)
    scores = true_label_score(probs, y)
    grads = input_gradients(net_T, x, y, tau) if with_grads else None
    return TeacherTargets(logits.array, probs.array, np.atleast_1d(scores.array).copy(), grads)


def loss_terms(net_S, net_T, x, y, cfg, tape, targets=None):
    """All terms of the objective for one batch.

    total = L_KD + C1 * L_G + C2 * L_S; a term with a zero coefficient is
    not built at all.

    :param net_S: student network
    :param net_T: frozen teacher network
    :param x: input batch
    :param y: labels
    :type cfg: LossConfig
    :type tape: Tape
    :param targets: cached teacher outputs for this batch (optional)
    :type targets: TeacherTargets
    :rtype: LossTerms
    """
    need_grads = cfg.c1 > 0
    if targets is None or (need_grads and targets.grads is None):
        targets = teacher_targets(net_T, x, y, cfg.tau, with_grads=need_grads)
    x_leaf = tape.leaf(x) if need_grads else tape.constant(x)
    logits_S, probs_S = net_S.forward(tape, x_leaf)
    if cfg.mimic:
        kd = mimic_loss(probs_S, targets.probs, y, cfg.lam)
    else:
        kd = kd_loss(probs_S, logits_S, targets.probs, targets.logits, y, cfg)
    terms = LossTerms(kd)
    total = kd
    if need_grads:
        score_S = softened_score(logits_S, probs_S, y, cfg.tau)
        terms.gradient = _gradient_gap(tape, x_leaf, score_S, targets.grads)
        total = ad.add(total, ad.scale(terms.gradient, cfg.c1))
    f_S = true_label_score(probs_S, y)
    if cfg.c2 > 0:
        terms.score = score_margin_loss(f_S, targets.scores, cfg.gamma)
        total = ad.add(total, ad.scale(terms.score, cfg.c2))
    terms.total = total
    terms.margin = float(np.mean(np.atleast_1d(f_S.array) - targets.scores))
    return terms


def total_loss(net_S, net_T, x, y, cfg, tape, targets=None):
    """L_KD + C1 * L_G + C2 * L_S as one differentiable node.

    :rtype: Node
    """
    return loss_terms(net_S, net_T, x, y, cfg, tape, targets).total


def combine(kd, gradient, score, cfg):
    """Weighted sum of precomputed term values."""
    return float(kd) + cfg.c1 * float(gradient) + cfg.c2 * float(score)

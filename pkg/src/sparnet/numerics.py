"""Probability and loss primitives shared across the package.

Every function accepts either a single vector (shape ``(C,)``) or a batch
(shape ``(N, C)``); reductions run over the last axis.
"""

import numpy as np

#: Floor applied to probabilities inside every cross-entropy log.
PROB_FLOOR = 1e-7


def _check_tau(tau):
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau!r}")


def log_softmax(z, tau=1.0):
    _check_tau(tau)
    z = np.asarray(z, dtype=float) / tau
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z, tau=1.0):
    """Temperature-scaled softmax, stable under constant shifts of ``z``."""
    _check_tau(tau)
    z = np.asarray(z, dtype=float) / tau
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def entropy(p):
    """Shannon entropy in nats, with ``0 * log 0 == 0``."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return np.maximum(-terms.sum(axis=-1), 0.0)


def entropy_from_logits(z, tau=1.0):
    logp = log_softmax(z, tau)
    return -(np.exp(logp) * logp).sum(axis=-1)


def cross_entropy(target, pred, eps=PROB_FLOOR):
    """``-sum(target * log(max(pred, eps)))`` over the class axis."""
    target = np.asarray(target, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if target.shape != pred.shape:
        raise ValueError(f"shape mismatch: {target.shape} vs {pred.shape}")
    return -(target * np.log(np.maximum(pred, eps))).sum(axis=-1)


def logits_std(z):
    """Population standard deviation of each sample's logits."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] < 2:
        raise ValueError("need at least two classes")
    return z.std(axis=-1)


def dynamic_temperature(logits, s=1.0):
    """Softening temperature ``max(1, s * mean_i std(z_i))`` for a logits batch."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    if logits.shape[0] == 0:
        raise ValueError("dynamic temperature needs a nonempty batch")
    if not s > 0:
        raise ValueError(f"scaling strength must be positive, got {s!r}")
    return max(1.0, float(s * logits_std(logits).mean()))

"""Adaptation loss terms with their analytic gradients.

Each batch loss is the arithmetic mean over the samples it receives. An empty
group contributes exactly zero with a zero gradient.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError
from .numerics import PROB_FLOOR, entropy, log_softmax


def em_loss(probs):
    """Mean prediction entropy of a probability batch."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    if probs.shape[0] == 0:
        return 0.0
    return float(entropy(probs).mean())


def gem_loss(logits, tau=1.0):
    """Temperature-softened entropy ``tau**2 * H(softmax(z / tau))``, batch mean.

    ``tau`` is treated as a constant when differentiating. Returns
    ``(value, dloss/dlogits)``.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau!r}")
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    n = logits.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax(logits, tau)
    p = np.exp(logp)
    h = -(p * logp).sum(axis=1)
    value = tau**2 * h.mean()
    # dH/du = -p (log p + H) with u = z / tau
    grad = -(tau / n) * p * (logp + h[:, None])
    return float(value), grad


def sce_loss(pseudo, student, eps=PROB_FLOOR):
    """Symmetric cross-entropy ``0.5 * (CE(pseudo, student) + CE(student, pseudo))``.

    ``pseudo`` is a constant target. Returns ``(value, dloss/dstudent_probs)``.
    """
    pseudo = np.atleast_2d(np.asarray(pseudo, dtype=float))
    student = np.atleast_2d(np.asarray(student, dtype=float))
    if pseudo.shape != student.shape:
        raise ShapeError(f"pseudo-label shape {pseudo.shape} != student shape {student.shape}")
    n = student.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(student)
    floored_student = np.maximum(student, eps)
    log_student = np.log(floored_student)
    log_pseudo = np.log(np.maximum(pseudo, eps))
    forward_ce = -(pseudo * log_student).sum(axis=1)
    reverse_ce = -(student * log_pseudo).sum(axis=1)
    value = 0.5 * (forward_ce + reverse_ce).mean()
    d_forward = np.where(student > eps, -pseudo / floored_student, 0.0)
    grad = 0.5 * (d_forward - log_pseudo) / n
    return float(value), grad


def softmax_backward(probs, dprobs):
    """Chain a probability-space gradient through ``softmax``."""
    return probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))


def reg_loss(theta, theta0, omega):
    """Importance-weighted squared drift ``sum(omega * (theta - theta0)**2)``."""
    theta = np.asarray(theta, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if not theta.shape == theta0.shape == omega.shape:
        raise ShapeError(
            f"length mismatch: theta {theta.shape}, theta0 {theta0.shape}, omega {omega.shape}"
        )
    if np.any(omega < 0):
        raise ValueError("importance weights must be nonnegative")
    drift = theta - theta0
    return float(np.sum(omega * drift * drift)), 2.0 * omega * drift


@dataclass(frozen=True)
class LossBreakdown:
    gem: float
    sce: float
    reg: float
    total: float
    tau_used: float
    n_reliable: int
    n_unreliable: int

    @property
    def counts(self):
        return (self.n_reliable, self.n_unreliable)

    def terms(self):
        return {"gem": self.gem, "sce": self.sce, "reg": self.reg, "total": self.total}


def total_objective(gem, sce, reg, lam=1.8, beta=1.0, *, tau_used=1.0, counts=None):
    """Combine ``sce + lam * gem + beta * reg``.

    When ``counts`` is given, an empty reliable group zeroes the GEM term and
    an empty unreliable group zeroes the SCE term.
    """
    if lam < 0 or beta < 0:
        raise ValueError("loss weights must be nonnegative")
    n_rel, n_unrel = (None, None) if counts is None else counts
    if n_rel == 0:
        gem = 0.0
    if n_unrel == 0:
        sce = 0.0
    total = sce + lam * gem + beta * reg
    return LossBreakdown(
        gem=float(gem),
        sce=float(sce),
        reg=float(reg),
        total=float(total),
        tau_used=float(tau_used),
        n_reliable=int(n_rel or 0),
        n_unreliable=int(n_unrel or 0),
    )


def gem_loss_dynamic(logits, s=1.0):
    """GEM with the batch temperature ``max(1, s * mean std(z_i))`` differentiated through.

    Returns ``(value, dloss/dlogits, tau)``.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    n, c = logits.shape
    if n == 0:
        return 0.0, np.zeros_like(logits), 1.0
    stds = logits.std(axis=1)
    raw = s * stds.mean()
    tau = max(1.0, float(raw))
    value, grad = gem_loss(logits, tau)
    if raw > 1.0:
        logp = log_softmax(logits, tau)
        p = np.exp(logp)
        h = -(p * logp).sum(axis=1, keepdims=True)
        u = logits / tau
        dh_dtau = (p * (logp + h) * u).sum(axis=1) / tau
        dloss_dtau = 2 * tau * h.mean() + tau**2 * dh_dtau.mean()
        centered = logits - logits.mean(axis=1, keepdims=True)
        dstd = centered / (c * np.where(stds > 0, stds, 1.0)[:, None])
        grad = grad + dloss_dtau * (s / n) * dstd
    return value, grad, tau

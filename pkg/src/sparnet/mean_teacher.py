"""EMA teacher, weak/strong augmentation, and augmentation-averaged pseudo-labels."""

import numpy as np

from .exceptions import ShapeError
from .model import BATCH_STATS, forward
from .numerics import softmax
from .streambench import KINDS, apply_corruption, draw_transform, severity_magnitude


class TeacherState:
    """Teacher parameters updated as an exponential moving average of the student."""

    def __init__(self, params, alpha=0.999, n_aug=32):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        if n_aug < 1:
            raise ValueError(f"n_aug must be positive, got {n_aug}")
        self.params = params.copy()
        self.alpha = float(alpha)
        self.n_aug = int(n_aug)

    def ema_update(self, student):
        """``teacher <- alpha * teacher + (1 - alpha) * student``.

        ``student`` is a :class:`ModelParams` (running statistics are blended
        too) or a bare parameter vector.
        """
        theta = getattr(student, "theta", student)
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.params.theta.shape:
            raise ShapeError(
                f"student vector {theta.shape} != teacher vector {self.params.theta.shape}"
            )
        a = self.alpha
        self.params.theta = a * self.params.theta + (1 - a) * theta
        if hasattr(student, "running_mean"):
            self.params.running_mean = [
                a * t + (1 - a) * s for t, s in zip(self.params.running_mean, student.running_mean)
            ]
            self.params.running_var = [
                a * t + (1 - a) * s for t, s in zip(self.params.running_var, student.running_var)
            ]
        return self


def weak_augment(x, rng, jitter=0.05, mask_rate=0.1, feature_scale=1.0):
    """Small perturbation: Gaussian jitter plus random zeroing of coordinates.

    Each coordinate is zeroed independently with probability ``mask_rate``.
    """
    x = np.asarray(x, dtype=float)
    out = x
    if jitter > 0:
        out = out + jitter * feature_scale * rng.standard_normal(x.shape)
    if mask_rate > 0:
        out = np.where(rng.random(x.shape) < mask_rate, 0.0, out)
    return out


def strong_augment(x, rng, feature_scale=1.0, severity_range=(1.0, 3.0), severity_scale=1.0, kinds=KINDS):
    """Per-sample draw of a corruption kind, its structure, and a severity.

    Works on one sample ``(d,)`` or a batch ``(N, d)``; each row gets its own
    independent draw. ``severity_scale=0`` makes this the identity.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    n, d = xb.shape
    kind_idx = rng.integers(0, len(kinds), size=n)
    severity = severity_scale * rng.uniform(*severity_range, size=n)
    out = xb.copy()
    for i, kind in enumerate(kinds):
        rows = np.flatnonzero(kind_idx == i)
        if rows.size == 0:
            continue
        transform = draw_transform(kind, d, rng, n=rows.size)
        magnitude = severity_magnitude(kind, severity[rows])
        out[rows] = apply_corruption(kind, xb[rows], magnitude, transform, rng, feature_scale)
    return out[0] if single else out


def strong_augment_sample(x, rng, feature_scale=1.0, severity_scale=1.0):
    return strong_augment(np.asarray(x, dtype=float)[None], rng, feature_scale, severity_scale=severity_scale)[0]


def aug_avg_prediction(teacher, x, rng, feature_scale=1.0, augment=None):
    """Teacher softmax averaged over ``teacher.n_aug`` strong augmentations.

    Each augmentation pass runs the teacher on the whole batch with batch
    statistics; the teacher's running statistics are not modified.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if augment is None:
        augment = lambda xs, r: strong_augment(xs, r, feature_scale)  # noqa: E731
    total = np.zeros((x.shape[0], teacher.params.arch.n_classes))
    for _ in range(teacher.n_aug):
        logits, _ = forward(teacher.params, augment(x, rng), BATCH_STATS, track_running=False)
        total += softmax(logits)
    return total / teacher.n_aug

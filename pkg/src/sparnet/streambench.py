"""Synthetic continual-shift benchmark.

A Gaussian-cluster source task, a family of six vector corruptions with five
severity levels, a deterministic domain stream, and evaluation helpers.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import RUNNING_STATS, predict_proba
from .exceptions import ShapeError

KINDS = ("gauss_noise", "impulse_mask", "rotation", "scale", "shift", "blur_avg")

#: Magnitude at severity 5 for each corruption kind. Noise and shift are in
#: units of the source feature scale.
M_MAX = {
    "gauss_noise": 1.0,
    "impulse_mask": 0.3,
    "rotation": math.pi / 4,
    "scale": 2.0,
    "shift": 1.0,
    "blur_avg": 1.0,
}
MAX_SEVERITY = 5
BLUR_OFFSETS = (1, 2, 3)


def _seed_rng(*keys):
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


# -- source task ------------------------------------------------------------


@dataclass
class SourceTask:
    d: int
    n_classes: int
    means: np.ndarray
    sigma: float
    x_train: np.ndarray = field(repr=False)
    y_train: np.ndarray = field(repr=False)
    x_holdout: np.ndarray = field(repr=False)
    y_holdout: np.ndarray = field(repr=False)
    seed: int = 0

    @property
    def feature_scale(self):
        """Per-coordinate standard deviation of the source marginal."""
        centered = self.means - self.means.mean(axis=0)
        return float(np.sqrt((centered**2).mean() + self.sigma**2))

    def sample(self, n, rng):
        y = rng.integers(0, self.n_classes, size=n)
        x = self.means[y] + self.sigma * rng.standard_normal((n, self.d))
        return x, y


def make_source_task(d=32, n_classes=10, seed=0, *, sigma=0.15, smoothing=2.0, n_train=4000, n_holdout=2000):
    """Gaussian class clusters with means on the unit sphere.

    Raw means are iid normal, then smoothed along the (circular) coordinate
    axis with a Gaussian kernel of width ``smoothing`` before normalisation,
    so neighbouring features are correlated. ``smoothing=0`` keeps them iid.
    """
    if d < 2 or n_classes < 2:
        raise ValueError(f"need d >= 2 and C >= 2, got d={d}, C={n_classes}")
    if sigma <= 0 or n_train < 1 or n_holdout < 1:
        raise ValueError("sigma and split sizes must be positive")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    rng = _seed_rng(seed, 0)
    means = smooth_rows(rng.standard_normal((n_classes, d)), smoothing)
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    task = SourceTask(d, n_classes, means, sigma, None, None, None, None, seed)
    # holdout and train are independent draws; the joint law is continuous so
    # the two sets are disjoint almost surely
    task.x_train, task.y_train = task.sample(n_train, _seed_rng(seed, 1))
    task.x_holdout, task.y_holdout = task.sample(n_holdout, _seed_rng(seed, 2))
    return task


def smooth_rows(a, width):
    """Circular Gaussian smoothing of each row, kernel truncated at 4 widths."""
    if width == 0:
        return a.copy()
    reach = min(int(math.ceil(4 * width)), a.shape[1] // 2)
    out = np.zeros_like(a)
    for k in range(-reach, reach + 1):
        out += math.exp(-0.5 * (k / width) ** 2) * np.roll(a, k, axis=1)
    return out


# -- corruptions ------------------------------------------------------------


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: float = MAX_SEVERITY
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}; expected one of {KINDS}")
        if not 0 <= self.severity <= MAX_SEVERITY:
            raise ValueError(f"severity must lie in [0, {MAX_SEVERITY}], got {self.severity}")

    def magnitude(self):
        """Transform strength; zero at severity 0 for every kind."""
        return severity_magnitude(self.kind, self.severity)


def severity_magnitude(kind, severity):
    m_max = M_MAX[kind]
    if kind == "scale":
        # the scale factor itself is 1 + magnitude
        m_max -= 1.0
    return np.asarray(severity, dtype=float) / MAX_SEVERITY * m_max


def draw_transform(kind, d, rng, n=None):
    """Random structural part of a corruption.

    With ``n`` given, one independent draw per sample (leading axis ``n``);
    otherwise a single draw shared by a whole domain.
    """
    shape = () if n is None else (n,)
    if kind == "rotation":
        u = rng.standard_normal(shape + (d,))
        v = rng.standard_normal(shape + (d,))
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        v -= (v * u).sum(axis=-1, keepdims=True) * u
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        return {"u": u, "v": v}
    if kind == "shift":
        return {"direction": rng.choice([-1.0, 1.0], size=shape + (d,))}
    if kind == "blur_avg":
        return {"offset": rng.choice(BLUR_OFFSETS, size=shape)}
    return {}


def apply_corruption(kind, x, magnitude, transform, rng, feature_scale=1.0):
    """Apply one corruption kind to a batch ``x`` of shape ``(N, d)``.

    ``magnitude`` is a scalar or an ``(N,)`` array; zero is the identity for
    every kind.
    """
    x = np.asarray(x, dtype=float)
    m = np.asarray(magnitude, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    n, d = x.shape
    if kind == "gauss_noise":
        return x + m * feature_scale * rng.standard_normal((n, d))
    if kind == "impulse_mask":
        return np.where(rng.random((n, d)) < m, 0.0, x)
    if kind == "rotation":
        u, v = transform["u"], transform["v"]
        xu = (x * u).sum(axis=-1, keepdims=True)
        xv = (x * v).sum(axis=-1, keepdims=True)
        return x + (np.cos(m) - 1) * (xu * u + xv * v) + np.sin(m) * (xu * v - xv * u)
    if kind == "scale":
        return (1.0 + m) * x
    if kind == "shift":
        return x + m * feature_scale * transform["direction"]
    if kind == "blur_avg":
        offset = np.broadcast_to(transform["offset"], (n,))
        out = x.copy()
        for k in np.unique(offset):
            rows = offset == k
            neighbours = 0.5 * (np.roll(x[rows], k, axis=1) + np.roll(x[rows], -k, axis=1))
            w = m[rows] if m.ndim == 2 else m
            out[rows] = (1 - w) * x[rows] + w * neighbours
        return out
    raise ValueError(f"unknown corruption kind {kind!r}")


def corrupt(x, spec, rng, feature_scale=1.0, transform=None):
    """Corrupt one sample ``(d,)`` or a batch ``(N, d)`` with ``spec``.

    The structural draw (rotation plane, shift signs, blur stencil) comes from
    ``spec.seed`` unless ``transform`` is supplied.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if transform is None:
        transform = draw_transform(spec.kind, xb.shape[1], _seed_rng(spec.seed, 7))
    out = apply_corruption(spec.kind, xb, spec.magnitude(), transform, rng, feature_scale)
    return out[0] if single else out


def scale_factor(severity):
    return 1.0 + float(severity_magnitude("scale", severity))


# -- domain stream ----------------------------------------------------------


@dataclass(frozen=True)
class StreamSpec:
    kinds: tuple = KINDS
    severity: int = MAX_SEVERITY
    batches_per_domain: int = 50
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if self.batches_per_domain < 1 or self.batch_size < 1:
            raise ValueError("batches_per_domain and batch_size must be positive")
        if not self.kinds:
            raise ValueError("stream needs at least one corruption kind")
        for kind in self.kinds:
            if kind not in KINDS:
                raise ValueError(f"unknown corruption kind {kind!r}")

    def to_dict(self):
        out = asdict(self)
        out["kinds"] = list(self.kinds)
        return out


@dataclass(frozen=True)
class Batch:
    step: int
    domain_index: int
    spec: CorruptionSpec
    x: np.ndarray
    labels: np.ndarray


class DomainStream:
    """Ordered corrupted batches drawn fresh from the source distribution.

    Every batch is a pure function of ``(task, stream seed, step)``, so the
    stream can be iterated repeatedly with identical results.
    """

    def __init__(self, task, spec):
        self.task = task
        self.spec = spec
        self.domains = [
            CorruptionSpec(kind, spec.severity, seed=int(_seed_rng(spec.seed, 11, i).integers(2**31)))
            for i, kind in enumerate(spec.kinds)
        ]
        self._transforms = [
            draw_transform(dom.kind, task.d, _seed_rng(dom.seed, 7)) for dom in self.domains
        ]

    def __len__(self):
        return len(self.domains) * self.spec.batches_per_domain

    def batch(self, step):
        if not 0 <= step < len(self):
            raise IndexError(step)
        domain_index = step // self.spec.batches_per_domain
        dom = self.domains[domain_index]
        rng = _seed_rng(self.spec.seed, 13, step)
        x, y = self.task.sample(self.spec.batch_size, rng)
        x = corrupt(x, dom, rng, self.task.feature_scale, self._transforms[domain_index])
        return Batch(step, domain_index, dom, x, y)

    def __iter__(self):
        for step in range(len(self)):
            yield self.batch(step)


def build_stream(task, kinds=KINDS, severity=MAX_SEVERITY, batches_per_domain=50, batch_size=64, seed=0):
    return DomainStream(
        task, StreamSpec(tuple(kinds), severity, batches_per_domain, batch_size, seed)
    )


# -- metrics ----------------------------------------------------------------


def error_rate(predictions, labels):
    """Fraction of predictions that differ from ``labels``.

    ``predictions`` may be class indices or a probability matrix.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.ndim == 2:
        predictions = predictions.argmax(axis=1)
    if predictions.shape != labels.shape:
        raise ShapeError(f"{predictions.shape[0]} predictions vs {labels.shape[0]} labels")
    if labels.size == 0:
        return 0.0
    return float(np.mean(predictions != labels))


def forgetting_probe(params, x_holdout, y_holdout):
    """Source-holdout error of ``params`` in running-stats mode; side-effect free."""
    return error_rate(predict_proba(params, x_holdout, RUNNING_STATS), y_holdout)

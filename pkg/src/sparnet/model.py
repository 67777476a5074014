"""A small normalized MLP with hand-written backprop.

Architecture: ``d -> [affine -> batchnorm -> tanh] * len(hidden) -> affine -> C``.
All trainable parameters live in one flat float64 vector; per-layer arrays
are views into it, in the canonical order

    for each hidden layer: W (h, in), b (h,), gamma (h,), beta (h,)
    output layer:          W (C, in), b (C,)

Running normalization statistics are stored next to, but outside of, the
flat vector; they are never touched by an optimizer.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ArchitectureMismatchError,
    CheckpointFormatError,
    InvalidStateError,
    NumericalError,
    ShapeError,
    TrainingFailedError,
)
from .numerics import softmax

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CHECKPOINT_VERSION = 1

BATCH_STATS = "batch_stats"
RUNNING_STATS = "running_stats"
NORM_MODES = (BATCH_STATS, RUNNING_STATS)


@dataclass(frozen=True)
class Architecture:
    d: int
    hidden: tuple = (64,)
    n_classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d < 1 or self.n_classes < 2 or any(h < 1 for h in self.hidden):
            raise ValueError(f"invalid architecture {self}")

    def layout(self):
        """List of ``(name, shape)`` in canonical flat order."""
        out = []
        fan_in = self.d
        for k, h in enumerate(self.hidden):
            out += [
                (f"hidden{k}.weight", (h, fan_in)),
                (f"hidden{k}.bias", (h,)),
                (f"norm{k}.gamma", (h,)),
                (f"norm{k}.beta", (h,)),
            ]
            fan_in = h
        out += [("out.weight", (self.n_classes, fan_in)), ("out.bias", (self.n_classes,))]
        return out

    @property
    def n_params(self):
        return sum(int(np.prod(shape)) for _, shape in self.layout())

    def to_dict(self):
        return {"d": self.d, "hidden": list(self.hidden), "C": self.n_classes}


class ModelParams:
    """Trainable flat vector plus running normalization statistics."""

    def __init__(self, arch, theta=None, running_mean=None, running_var=None):
        self.arch = arch
        self.theta = (
            np.zeros(arch.n_params) if theta is None else np.array(theta, dtype=float)
        )
        if self.theta.shape != (arch.n_params,):
            raise ShapeError(
                f"expected {arch.n_params} parameters, got {self.theta.shape}"
            )
        self.running_mean = (
            [np.zeros(h) for h in arch.hidden]
            if running_mean is None
            else [np.array(m, dtype=float) for m in running_mean]
        )
        self.running_var = (
            [np.ones(h) for h in arch.hidden]
            if running_var is None
            else [np.array(v, dtype=float) for v in running_var]
        )
        self._slices = {}
        offset = 0
        for name, shape in arch.layout():
            size = int(np.prod(shape))
            self._slices[name] = (slice(offset, offset + size), shape)
            offset += size

    def __getitem__(self, name):
        sl, shape = self._slices[name]
        return self.theta[sl].reshape(shape)

    def copy(self):
        return ModelParams(
            self.arch,
            self.theta.copy(),
            [m.copy() for m in self.running_mean],
            [v.copy() for v in self.running_var],
        )

    def flatten(self):
        return self.theta.copy()

    def unflatten(self, vector):
        """New params with ``vector`` as the trainable part, same running stats."""
        return ModelParams(self.arch, vector, self.running_mean, self.running_var)

    def norm_mask(self):
        """Boolean mask selecting normalization scale/shift entries."""
        mask = np.zeros(self.arch.n_params, dtype=bool)
        for name, (sl, _) in self._slices.items():
            if name.startswith("norm"):
                mask[sl] = True
        return mask

    def checksum(self):
        return hashlib.sha256(self.theta.astype("<f8").tobytes()).hexdigest()


def init_params(arch, rng):
    """Glorot-style random init; norm layers start as identity."""
    params = ModelParams(arch)
    fan_in = arch.d
    for k, h in enumerate(arch.hidden):
        params[f"hidden{k}.weight"][...] = rng.normal(0, 1 / np.sqrt(fan_in), (h, fan_in))
        params[f"norm{k}.gamma"][...] = 1.0
        fan_in = h
    params["out.weight"][...] = rng.normal(
        0, 1 / np.sqrt(fan_in), (arch.n_classes, fan_in)
    )
    return params


class ForwardTrace:
    """Cached activations of one forward pass; consumed by a single backward."""

    def __init__(self, arch, mode, theta, x, layers, out_input):
        self.arch = arch
        self.mode = mode
        self.theta = theta
        self.x = x
        self.layers = layers
        self.out_input = out_input
        self.consumed = False

    @property
    def batch_size(self):
        return self.x.shape[0]

    def batch_stats(self):
        return [(layer["mean"], layer["var"]) for layer in self.layers]


def _check_input(arch, x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != arch.d:
        raise ShapeError(f"expected input of shape (N, {arch.d}), got {x.shape}")
    if x.shape[0] < 1:
        raise ShapeError("empty batch")
    return x


def forward(params, x, norm_mode=RUNNING_STATS, track_running=True):
    """Logits for ``x`` and the trace needed to backprop through them.

    In ``batch_stats`` mode the current batch's mean and (biased) variance
    normalize each hidden layer and, if ``track_running``, the stored running
    statistics move towards them with momentum 0.1.
    """
    if norm_mode not in NORM_MODES:
        raise ValueError(f"unknown norm mode {norm_mode!r}")
    arch = params.arch
    x = _check_input(arch, x)
    n = x.shape[0]
    if norm_mode == BATCH_STATS and n < 2:
        raise ValueError("batch statistics need at least two samples")

    theta = params.theta.copy()
    view = params.unflatten(theta)
    layers = []
    a = x
    for k in range(len(arch.hidden)):
        h = a @ view[f"hidden{k}.weight"].T + view[f"hidden{k}.bias"]
        if norm_mode == BATCH_STATS:
            mu = h.mean(axis=0)
            var = h.var(axis=0)
        else:
            mu = params.running_mean[k]
            var = params.running_var[k]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (h - mu) * inv_std
        act = np.tanh(view[f"norm{k}.gamma"] * xhat + view[f"norm{k}.beta"])
        layers.append(
            {"input": a, "xhat": xhat, "inv_std": inv_std, "act": act, "mean": mu, "var": var}
        )
        a = act
    logits = a @ view["out.weight"].T + view["out.bias"]

    trace = ForwardTrace(arch, norm_mode, theta, x, layers, a)
    if norm_mode == BATCH_STATS and track_running:
        update_running_stats(params, trace)
    return logits, trace


def update_running_stats(params, trace, momentum=BN_MOMENTUM):
    """Move running statistics towards a batch-stats trace (unbiased variance)."""
    if trace.mode != BATCH_STATS:
        raise ValueError("only batch-statistics traces carry batch moments")
    n = trace.batch_size
    for k, layer in enumerate(trace.layers):
        unbiased = layer["var"] * n / (n - 1)
        params.running_mean[k] = (1 - momentum) * params.running_mean[k] + momentum * layer["mean"]
        params.running_var[k] = (1 - momentum) * params.running_var[k] + momentum * unbiased


def backward(trace, dlogits):
    """Gradient of the scalar loss whose logit-gradient is ``dlogits``."""
    if trace.consumed:
        raise InvalidStateError("forward trace already consumed by a backward pass")
    arch = trace.arch
    dlogits = np.asarray(dlogits, dtype=float)
    if dlogits.shape != (trace.batch_size, arch.n_classes):
        raise ShapeError(
            f"dlogits shape {dlogits.shape} does not match trace "
            f"({trace.batch_size}, {arch.n_classes})"
        )
    trace.consumed = True

    view = ModelParams(arch, trace.theta)
    grad = ModelParams(arch)
    n = trace.batch_size

    grad["out.weight"][...] = dlogits.T @ trace.out_input
    grad["out.bias"][...] = dlogits.sum(axis=0)
    da = dlogits @ view["out.weight"]
    for k in reversed(range(len(arch.hidden))):
        layer = trace.layers[k]
        dy = da * (1.0 - layer["act"] ** 2)
        xhat = layer["xhat"]
        grad[f"norm{k}.gamma"][...] = (dy * xhat).sum(axis=0)
        grad[f"norm{k}.beta"][...] = dy.sum(axis=0)
        dxhat = dy * view[f"norm{k}.gamma"]
        if trace.mode == BATCH_STATS:
            dh = (layer["inv_std"] / n) * (
                n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
            )
        else:
            dh = dxhat * layer["inv_std"]
        grad[f"hidden{k}.weight"][...] = dh.T @ layer["input"]
        grad[f"hidden{k}.bias"][...] = dh.sum(axis=0)
        da = dh @ view[f"hidden{k}.weight"]
    return grad.theta


def predict_proba(params, x, norm_mode=RUNNING_STATS):
    logits, _ = forward(params, x, norm_mode, track_running=False)
    return softmax(logits)


# -- optimizers -------------------------------------------------------------


class SGD:
    """Plain gradient descent, no momentum."""

    kind = "sgd"

    def __init__(self, n_params, lr=2e-4):
        self.n_params = n_params
        self.lr = lr

    def _check(self, grad):
        grad = np.asarray(grad, dtype=float)
        if grad.shape != (self.n_params,):
            raise ShapeError(f"gradient length {grad.shape} != ({self.n_params},)")
        if not np.all(np.isfinite(grad)):
            raise NumericalError("non-finite gradient; optimizer step refused", "grad")
        return grad

    def step(self, theta, grad, mask=None):
        grad = self._check(grad)
        update = self.lr * grad
        if mask is not None:
            update = np.where(mask, update, 0.0)
        return theta - update


class Adam(SGD):
    """Bias-corrected Adam."""

    kind = "adam"

    def __init__(self, n_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(n_params, lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta, grad, mask=None):
        grad = self._check(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if mask is not None:
            update = np.where(mask, update, 0.0)
        return theta - update


def make_optimizer(kind, n_params, lr):
    if kind == "adam":
        return Adam(n_params, lr)
    if kind == "sgd":
        return SGD(n_params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")


# -- source pretraining -----------------------------------------------------


def error_rate_of(params, x, y, norm_mode=RUNNING_STATS):
    proba = predict_proba(params, x, norm_mode)
    return float(np.mean(proba.argmax(axis=1) != np.asarray(y)))


def pretrain_source(
    x,
    y,
    arch,
    x_holdout=None,
    y_holdout=None,
    *,
    epochs=30,
    batch_size=128,
    lr=3e-3,
    target_error=0.05,
    label_smoothing=0.2,
    rng=None,
):
    """Fit a source model with minibatch Adam on cross-entropy.

    Raises :class:`TrainingFailedError` if the holdout error (running-stats
    mode) stays above ``target_error`` after ``epochs`` passes.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("source dataset is empty")
    if y.shape != (x.shape[0],):
        raise ShapeError("labels must align with samples")
    if y.min() < 0 or y.max() >= arch.n_classes:
        raise ValueError(f"labels must lie in [0, {arch.n_classes})")
    if x_holdout is None:
        x_holdout, y_holdout = x, y
    rng = np.random.default_rng(0) if rng is None else rng

    params = init_params(arch, rng)
    opt = Adam(arch.n_params, lr)
    n = x.shape[0]
    bs = min(batch_size, n)
    targets = np.full((arch.n_classes, arch.n_classes), label_smoothing / arch.n_classes)
    targets += (1.0 - label_smoothing) * np.eye(arch.n_classes)
    targets = targets[y]
    err = 1.0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n - bs + 1, bs):
            idx = order[start : start + bs]
            mode = BATCH_STATS if len(idx) > 1 else RUNNING_STATS
            logits, trace = forward(params, x[idx], mode)
            dlogits = (softmax(logits) - targets[idx]) / len(idx)
            params.theta = opt.step(params.theta, backward(trace, dlogits))
        err = error_rate_of(params, x_holdout, y_holdout)
        if err == 0.0:
            break
    if err > target_error:
        raise TrainingFailedError(
            f"source holdout error {err:.4f} above target {target_error:.4f}", err
        )
    return params


# -- checkpoints ------------------------------------------------------------


def checkpoint_document(params, importance=None, rng_note=""):
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": params.arch.to_dict(),
        "params": params.theta.tolist(),
        "running_mean": [m.tolist() for m in params.running_mean],
        "running_var": [v.tolist() for v in params.running_var],
        "rng_note": rng_note,
    }
    if importance is not None:
        doc["importance"] = importance.to_dict()
    return doc


def save_checkpoint(params, path, importance=None, rng_note=""):
    doc = checkpoint_document(params, importance, rng_note)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _field(doc, key, kind):
    if key not in doc:
        raise CheckpointFormatError("missing field", key)
    if not isinstance(doc[key], kind):
        raise CheckpointFormatError(f"expected {kind}, got {type(doc[key]).__name__}", key)
    return doc[key]


def _array(values, shape, field):
    try:
        arr = np.array(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"not a numeric array ({exc})", field) from None
    if arr.shape != shape:
        raise CheckpointFormatError(f"expected shape {shape}, got {arr.shape}", field)
    if not np.all(np.isfinite(arr)):
        raise CheckpointFormatError("non-finite entries", field)
    return arr


def parse_checkpoint(doc, expected_arch=None):
    """Return ``(params, importance_dict_or_None, rng_note)`` from a document."""
    if not isinstance(doc, dict):
        raise CheckpointFormatError("checkpoint root must be an object")
    version = _field(doc, "format_version", int)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", "format_version")
    arch_doc = _field(doc, "architecture", dict)
    try:
        arch = Architecture(
            d=int(arch_doc["d"]),
            hidden=tuple(arch_doc["hidden"]),
            n_classes=int(arch_doc["C"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"invalid architecture ({exc})", "architecture") from None
    if expected_arch is not None and arch != expected_arch:
        field = "architecture.C" if arch.n_classes != expected_arch.n_classes else "architecture"
        raise ArchitectureMismatchError(
            f"checkpoint has {arch.to_dict()}, run expects {expected_arch.to_dict()}", field
        )
    theta = _array(_field(doc, "params", list), (arch.n_params,), "params")
    means = _field(doc, "running_mean", list)
    variances = _field(doc, "running_var", list)
    if len(means) != len(arch.hidden) or len(variances) != len(arch.hidden):
        raise CheckpointFormatError("one entry per hidden layer required", "running_mean")
    means = [_array(m, (h,), f"running_mean[{k}]") for k, (m, h) in enumerate(zip(means, arch.hidden))]
    variances = [_array(v, (h,), f"running_var[{k}]") for k, (v, h) in enumerate(zip(variances, arch.hidden))]
    for k, v in enumerate(variances):
        if np.any(v <= 0):
            raise CheckpointFormatError("running variance must be positive", f"running_var[{k}]")
    params = ModelParams(arch, theta, means, variances)
    return params, doc.get("importance"), doc.get("rng_note", "")


def read_checkpoint(path, expected_arch=None):
    """Parse the checkpoint at ``path``; returns ``(params, importance, rng_note)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"corrupt checkpoint {path}: {exc}") from None
    return parse_checkpoint(doc, expected_arch)


def load_checkpoint(path, expected_arch=None):
    return read_checkpoint(path, expected_arch)[0]

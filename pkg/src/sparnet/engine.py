"""Online continual adaptation loop and baselines.

Per incoming batch the adapting model first emits its predictions, then
updates. Adaptation code only ever sees features; labels stay in
:func:`run_stream` where they feed the error metrics.
"""

import csv
import io
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .exceptions import MissingArtifactError, NumericalError
from .importance import ImportanceVector
from .losses import gem_loss, gem_loss_dynamic, reg_loss, sce_loss, softmax_backward, total_objective
from .mean_teacher import TeacherState, aug_avg_prediction, strong_augment, weak_augment
from .model import BATCH_STATS, RUNNING_STATS, backward, forward, make_optimizer, update_running_stats
from .numerics import dynamic_temperature, entropy, softmax
from .partition import default_threshold, partition_by_entropy
from .streambench import error_rate, forgetting_probe

METHODS = ("sparnet", "source", "bn_adapt", "tent")
UPDATE_SCOPES = ("all", "norm_only")

CSV_HEADER = (
    "step", "domain", "severity", "method", "batch_err", "mean_err_so_far",
    "n_reliable", "n_unreliable", "loss_total", "loss_gem", "loss_sce", "loss_reg",
    "probe_src_err",
)


@dataclass(frozen=True)
class EngineConfig:
    """Adaptation hyperparameters. Defaults follow the CIFAR-scale profile."""

    method: str = "sparnet"
    threshold: float = None  # None -> 0.4 * ln C
    lam: float = 1.8
    beta: float = 1.0
    temperature_scale: float = 1.0
    alpha: float = 0.999
    n_aug: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 200
    use_gem: bool = True
    use_sce: bool = True
    use_reg: bool = True
    tau_gradient: bool = True
    update: str = "all"
    weak_jitter: float = 0.05
    weak_mask_rate: float = 0.1
    probe_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.update not in UPDATE_SCOPES:
            raise ValueError(f"update must be one of {UPDATE_SCOPES}, got {self.update!r}")
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be nonnegative")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.n_aug < 1 or self.batch_size < 2:
            raise ValueError("n_aug must be >= 1 and batch_size >= 2")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not self.temperature_scale > 0 or not self.lr > 0:
            raise ValueError("temperature_scale and lr must be positive")

    @classmethod
    def desk(cls, **overrides):
        """Small-batch profile used by the synthetic benchmark."""
        return cls(**{"batch_size": 64, "n_aug": 8, **overrides})

    def resolved_threshold(self, n_classes):
        return default_threshold(n_classes) if self.threshold is None else self.threshold

    @property
    def needs_importance(self):
        return self.method == "sparnet" and self.use_reg

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        return replace(self, **changes)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class PredictionRecord:
    """Per-sample outputs emitted for one batch, before any update."""

    predicted: np.ndarray
    probs: np.ndarray
    entropy: np.ndarray
    reliable: np.ndarray

    def __len__(self):
        return len(self.predicted)

    @property
    def groups(self):
        return np.where(self.reliable, "reliable", "unreliable")

    def correct(self, labels):
        return self.predicted == np.asarray(labels)


def _record(probs, reliable=None, partition_probs=None):
    ent = entropy(probs if partition_probs is None else partition_probs)
    if reliable is None:
        reliable = np.zeros(len(probs), dtype=bool)
    return PredictionRecord(probs.argmax(axis=1), probs, ent, reliable)


class AdaptState:
    """Everything a run mutates, plus the frozen source snapshot and importance."""

    def __init__(self, params0, cfg, importance=None):
        if cfg.needs_importance:
            if importance is None:
                raise MissingArtifactError(
                    "sparnet with use_reg needs an importance vector; run `importance` first"
                )
            importance.check_against(params0)
        self.cfg = cfg
        self.student = params0.copy()
        self.optimizer = make_optimizer(cfg.optimizer, params0.arch.n_params, cfg.lr)
        self.teacher = TeacherState(params0, cfg.alpha, cfg.n_aug)
        theta0 = params0.flatten()
        theta0.setflags(write=False)
        self.theta0 = theta0
        self.importance = importance
        self.step = 0
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 101]))
        norm_mask = params0.norm_mask()
        self.mask = None if cfg.update == "all" else norm_mask
        self.norm_mask = norm_mask

    @property
    def n_classes(self):
        return self.student.arch.n_classes


def _check_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("adaptation batches need at least two samples")
    return x


def sparnet_step(state, x, feature_scale=1.0):
    """One online step: predict, partition, build the combined loss, update.

    Returns ``(record, breakdown)``. The record is computed from the pre-update
    student and teacher. On a non-finite loss or gradient the state is left
    untouched and :class:`NumericalError` names the offending term.
    """
    cfg = state.cfg
    x = _check_batch(x)
    rng = state.rng

    logits, trace = forward(state.student, x, BATCH_STATS, track_running=False)
    probs = softmax(logits)
    part = partition_by_entropy(probs, cfg.resolved_threshold(state.n_classes))
    teacher_logits, _ = forward(state.teacher.params, x, BATCH_STATS, track_running=False)
    ensemble = 0.5 * (probs + softmax(teacher_logits))
    record = _record(ensemble, part.reliable_mask(), probs)

    rel, unrel = part.reliable_idx, part.unreliable_idx
    dlogits = np.zeros_like(logits)
    gem = sce = reg = 0.0
    tau = 1.0
    if cfg.use_gem and rel.size:
        if cfg.tau_gradient:
            gem, dz, tau = gem_loss_dynamic(logits[rel], cfg.temperature_scale)
        else:
            tau = dynamic_temperature(logits[rel], cfg.temperature_scale)
            gem, dz = gem_loss(logits[rel], tau)
        dlogits[rel] = cfg.lam * dz
    weak_trace = weak_dlogits = None
    if cfg.use_sce and unrel.size:
        pseudo = aug_avg_prediction(
            state.teacher, x, rng, augment=lambda xs, r: strong_augment(xs, r, feature_scale)
        )[unrel]
        x_weak = weak_augment(x, rng, cfg.weak_jitter, cfg.weak_mask_rate, feature_scale)
        weak_logits, weak_trace = forward(state.student, x_weak, BATCH_STATS, track_running=False)
        weak_probs = softmax(weak_logits[unrel])
        sce, dprobs = sce_loss(pseudo, weak_probs)
        weak_dlogits = np.zeros_like(weak_logits)
        weak_dlogits[unrel] = softmax_backward(weak_probs, dprobs)
    reg_grad = None
    if cfg.use_reg and cfg.beta > 0 and state.importance is not None:
        reg, reg_grad = reg_loss(state.student.theta, state.theta0, state.importance.values)

    breakdown = total_objective(
        gem, sce, reg, cfg.lam, cfg.beta, tau_used=tau, counts=(rel.size, unrel.size)
    )
    for term, value in breakdown.terms().items():
        if not np.isfinite(value):
            raise NumericalError(f"non-finite {term} loss at step {state.step}", term)

    grad = backward(trace, dlogits)
    if weak_trace is not None:
        grad += backward(weak_trace, weak_dlogits)
    if reg_grad is not None:
        grad += cfg.beta * reg_grad
    new_theta = state.optimizer.step(state.student.theta, grad, state.mask)

    state.student.theta = new_theta
    update_running_stats(state.student, trace)
    state.teacher.ema_update(state.student)
    state.step += 1
    return record, breakdown


def tent_step(state, x):
    """Entropy minimization over the whole batch, normalization parameters only."""
    x = _check_batch(x)
    logits, trace = forward(state.student, x, BATCH_STATS, track_running=False)
    probs = softmax(logits)
    record = _record(probs)
    em, dlogits = gem_loss(logits, 1.0)
    if not np.isfinite(em):
        raise NumericalError(f"non-finite entropy loss at step {state.step}", "em")
    grad = backward(trace, dlogits)
    state.student.theta = state.optimizer.step(state.student.theta, grad, state.norm_mask)
    update_running_stats(state.student, trace)
    state.step += 1
    breakdown = total_objective(em, 0.0, 0.0, 1.0, 0.0, counts=(len(x), 0))
    return record, breakdown


def bn_adapt_predict(params0, x):
    """Predict with the current batch's normalization statistics; no weight update."""
    x = _check_batch(x)
    logits, _ = forward(params0, x, BATCH_STATS, track_running=False)
    return _record(softmax(logits))


def source_predict(params0, x):
    logits, _ = forward(params0, np.atleast_2d(x), RUNNING_STATS)
    return _record(softmax(logits))


# -- stream driver ----------------------------------------------------------


class MetricsTable:
    """Per-batch metrics of one run plus summary helpers."""

    def __init__(self, method, rows=None):
        self.method = method
        self.rows = [] if rows is None else rows
        self.final_params = None

    def append(self, row):
        self.rows.append(row)

    def domains(self):
        return list(dict.fromkeys(row["domain"] for row in self.rows))

    def per_domain_error(self):
        """Error rate per domain (batches are equally sized)."""
        out = {}
        for domain in self.domains():
            errs = [row["batch_err"] for row in self.rows if row["domain"] == domain]
            out[domain] = float(np.mean(errs))
        return out

    def mean_error(self):
        return float(np.mean(list(self.per_domain_error().values())))

    def probe_series(self):
        return [(row["step"], row["probe_src_err"]) for row in self.rows if row["probe_src_err"] is not None]

    @property
    def final_probe(self):
        series = self.probe_series()
        return series[-1][1] if series else None

    def to_csv(self, fh=None):
        """Write the run as CSV to ``fh`` (or return the text)."""
        own = fh is None
        if own:
            fh = io.StringIO()
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow([_fmt(row[key]) for key in CSV_HEADER])
        return fh.getvalue() if own else None


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def run_stream(cfg, stream, params0, importance=None, holdout=None):
    """Adapt over ``stream`` in order and record metrics per batch.

    ``holdout`` is an optional ``(x, y)`` pair of clean source samples used by
    the forgetting probe every ``cfg.probe_every`` steps and after the last
    batch.
    """
    if len(stream) == 0:
        raise ValueError("empty stream")
    if isinstance(importance, dict):
        importance = ImportanceVector.from_dict(importance)
    state = AdaptState(params0, cfg, importance)
    feature_scale = stream.task.feature_scale
    table = MetricsTable(cfg.method)
    n_wrong = n_seen = 0
    last = len(stream) - 1
    for batch in stream:
        x = batch.x
        breakdown = None
        if cfg.method == "sparnet":
            record, breakdown = sparnet_step(state, x, feature_scale)
        elif cfg.method == "tent":
            record, breakdown = tent_step(state, x)
        elif cfg.method == "bn_adapt":
            record = bn_adapt_predict(params0, x)
        else:
            record = source_predict(params0, x)

        batch_err = error_rate(record.predicted, batch.labels)
        n_wrong += int(np.count_nonzero(~record.correct(batch.labels)))
        n_seen += len(x)
        probe = None
        if holdout is not None and (
            batch.step == last or (cfg.probe_every and (batch.step + 1) % cfg.probe_every == 0)
        ):
            probe = forgetting_probe(state.student, *holdout)
        table.append(
            {
                "step": batch.step,
                "domain": batch.spec.kind,
                "severity": batch.spec.severity,
                "method": cfg.method,
                "batch_err": batch_err,
                "mean_err_so_far": n_wrong / n_seen,
                "n_reliable": breakdown.n_reliable if breakdown is not None else 0,
                "n_unreliable": breakdown.n_unreliable if breakdown is not None else 0,
                "loss_total": breakdown.total if breakdown is not None else 0.0,
                "loss_gem": breakdown.gem if breakdown is not None else 0.0,
                "loss_sce": breakdown.sce if breakdown is not None else 0.0,
                "loss_reg": breakdown.reg if breakdown is not None else 0.0,
                "probe_src_err": probe,
            }
        )
    table.final_params = state.student
    return table

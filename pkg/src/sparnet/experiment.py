"""Multi-seed benchmark driver shared by the CLI and the acceptance suite.

Each seed gets its own source task, pretrained model, importance vector and
stream, so seeds are fully independent replicates.
"""

from dataclasses import dataclass

import numpy as np

from .engine import EngineConfig, run_stream
from .importance import compute_importance
from .model import Architecture, error_rate_of, pretrain_source
from .streambench import KINDS, build_stream, make_source_task

TASK_DEFAULTS = {"d": 32, "n_classes": 10, "sigma": 0.15, "smoothing": 2.0, "n_train": 4000, "n_holdout": 2000}
MODEL_DEFAULTS = {
    "hidden": (64,), "epochs": 30, "batch_size": 128, "lr": 3e-3,
    "target_error": 0.05, "label_smoothing": 0.2,
}
STREAM_DEFAULTS = {"kinds": KINDS, "severity": 5, "batches_per_domain": 50}
IMPORTANCE_SAMPLES = 512


@dataclass
class SeedSetup:
    seed: int
    task: object
    params0: object
    importance: object
    holdout_error: float

    @property
    def holdout(self):
        return self.task.x_holdout, self.task.y_holdout


def prepare_seed(seed, task=None, model=None, n_importance=IMPORTANCE_SAMPLES):
    """Source task, pretrained model and importance vector for one seed."""
    task_kw = {**TASK_DEFAULTS, **(task or {})}
    model_kw = {**MODEL_DEFAULTS, **(model or {})}
    src = make_source_task(seed=seed, **task_kw)
    arch = Architecture(src.d, tuple(model_kw.pop("hidden")), src.n_classes)
    params0 = pretrain_source(
        src.x_train, src.y_train, arch, src.x_holdout, src.y_holdout,
        rng=np.random.default_rng(np.random.SeedSequence([seed, 3])), **model_kw,
    )
    omega = compute_importance(params0, src.x_train[:n_importance])
    err = error_rate_of(params0, src.x_holdout, src.y_holdout)
    return SeedSetup(seed, src, params0, omega, err)


def run_configs(configs, seeds=range(5), task=None, model=None, stream=None, setups=None):
    """Run every named engine config on every seed.

    ``configs`` maps a label to an :class:`EngineConfig` or a dict of
    overrides on the desk profile; the config seed is set per replicate.
    Returns ``{label: [MetricsTable per seed]}``.
    """
    stream_kw = {**STREAM_DEFAULTS, **(stream or {})}
    setups = setups or {}
    out = {label: [] for label in configs}
    for seed in seeds:
        setup = setups.get(seed) or prepare_seed(seed, task, model)
        setups[seed] = setup
        for label, cfg in configs.items():
            if isinstance(cfg, dict):
                cfg = EngineConfig.desk(**cfg)
            cfg = cfg.replace(seed=seed)
            st = build_stream(setup.task, batch_size=cfg.batch_size, seed=seed, **stream_kw)
            out[label].append(run_stream(cfg, st, setup.params0, setup.importance, setup.holdout))
    return out


def summarize(tables):
    """Mean error, final probe and parameter drift per label."""
    rows = {}
    for label, runs in tables.items():
        errs = [t.mean_error() for t in runs]
        rows[label] = {
            "mean_error": float(np.mean(errs)),
            "std_error": float(np.std(errs)),
            "per_seed": errs,
            "final_probe": float(np.mean([t.final_probe for t in runs if t.final_probe is not None] or [np.nan])),
        }
    return rows

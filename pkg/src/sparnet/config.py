"""Run configuration: nested JSON document with defaults and dotted overrides."""

import copy
import json

from .engine import EngineConfig
from .exceptions import ConfigError
from .experiment import IMPORTANCE_SAMPLES, MODEL_DEFAULTS, STREAM_DEFAULTS, TASK_DEFAULTS

# config key -> EngineConfig field, where they differ
ENGINE_ALIASES = {"lambda": "lam"}


def _engine_defaults():
    fields = EngineConfig.desk().to_dict()
    fields.pop("seed")
    inverse = {v: k for k, v in ENGINE_ALIASES.items()}
    return {inverse.get(k, k): v for k, v in fields.items()}


DEFAULTS = {
    "task": {**TASK_DEFAULTS, "seed": 0},
    "model": {**MODEL_DEFAULTS, "hidden": list(MODEL_DEFAULTS["hidden"])},
    "importance": {"n_samples": IMPORTANCE_SAMPLES},
    "stream": {**STREAM_DEFAULTS, "kinds": list(STREAM_DEFAULTS["kinds"])},
    "engine": _engine_defaults(),
    "run": {"seeds": [0], "out_dir": "runs"},
}

# keys whose default is None accept these types
_NULLABLE = {"engine.threshold": (int, float)}


def default_config():
    return copy.deepcopy(DEFAULTS)


def _check_type(path, value, default):
    if default is None:
        allowed = _NULLABLE.get(path, ())
        if value is not None and (isinstance(value, bool) or not isinstance(value, allowed)):
            raise ConfigError(f"{path}: expected a number or null, got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool) and value != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return type(default)(value)
    elif isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return list(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def merge(base, doc, prefix=""):
    """Overlay ``doc`` on ``base`` in place, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    for key, value in doc.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"{path}: unknown config key")
        if isinstance(base[key], dict):
            merge(base[key], value, path + ".")
        else:
            base[key] = _check_type(path, value, base[key])
    return base


def parse_value(text):
    """Command-line override value: JSON if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, dotted, value):
    parts = dotted.split(".")
    doc = value
    for part in reversed(parts):
        doc = {part: doc}
    return merge(cfg, doc)


def load_config(path=None, overrides=()):
    """Defaults, then the JSON file at ``path``, then ``(dotted, value)`` pairs."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        merge(cfg, doc)
    for dotted, value in overrides:
        apply_override(cfg, dotted, value)
    validate(cfg)
    return cfg


def engine_config(cfg, seed):
    kwargs = {ENGINE_ALIASES.get(k, k): v for k, v in cfg["engine"].items()}
    try:
        return EngineConfig(seed=seed, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"engine: {exc}") from None


def validate(cfg):
    """Cross-field checks that plain type checks cannot express."""
    engine_config(cfg, 0)
    if not cfg["run"]["seeds"] or not all(isinstance(s, int) and not isinstance(s, bool) for s in cfg["run"]["seeds"]):
        raise ConfigError("run.seeds: expected a nonempty list of integers")
    if cfg["importance"]["n_samples"] < 1:
        raise ConfigError("importance.n_samples: must be positive")
    hidden = cfg["model"]["hidden"]
    if not hidden or not all(isinstance(h, int) and h > 0 for h in hidden):
        raise ConfigError("model.hidden: expected a nonempty list of positive integers")
    if cfg["stream"]["batches_per_domain"] < 1:
        raise ConfigError("stream.batches_per_domain: must be positive")
    return cfg


def dumps(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"

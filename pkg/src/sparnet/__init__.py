"""Continual test-time adaptation with reliable/unreliable sample partitioning.

Pure-numpy implementation of a small normalised MLP, the adaptation losses,
a mean teacher, parameter-importance regularisation, baselines, and a
synthetic continual-corruption benchmark.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .engine import EngineConfig, MetricsTable, run_stream
from .estimators import SourceClassifier, SparnetAdapter
from .importance import ImportanceVector, compute_importance
from .model import Architecture, ModelParams, forward, backward, init_params, pretrain_source
from .streambench import build_stream, make_source_task

__all__ = [
    "Architecture", "EngineConfig", "ImportanceVector", "MetricsTable", "ModelParams",
    "SourceClassifier", "SparnetAdapter", "backward", "build_stream", "compute_importance",
    "forward", "init_params", "make_source_task", "pretrain_source", "run_stream",
]

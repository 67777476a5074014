"""Output-sensitivity parameter importance, computed once on source data."""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import CheckpointFormatError, ConfigError
from .model import RUNNING_STATS, backward, forward


@dataclass(frozen=True)
class ImportanceVector:
    values: np.ndarray
    sample_count: int
    theta0_checksum: str

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if np.any(values < 0):
            raise ValueError("importance must be nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    def check_against(self, params):
        if params.checksum() != self.theta0_checksum:
            raise ConfigError(
                "importance vector was computed for a different source model "
                "(theta0 checksum mismatch); rerun `importance`"
            )

    def to_dict(self):
        return {
            "values": self.values.tolist(),
            "sample_count": self.sample_count,
            "theta0_checksum": self.theta0_checksum,
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(np.array(doc["values"], dtype=float), int(doc["sample_count"]), str(doc["theta0_checksum"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointFormatError(f"invalid importance block ({exc})", "importance") from None


def compute_importance(params0, source_x):
    """Mean over samples of ``|d ||f(x)||^2 / d theta|`` with ``f`` the logits.

    Samples are processed one at a time in running-statistics mode, so they do
    not interact through batch statistics; labels are not used.
    """
    source_x = np.atleast_2d(np.asarray(source_x, dtype=float))
    q = source_x.shape[0]
    if q == 0:
        raise ValueError("importance needs at least one source sample")
    per_sample = np.empty((q, params0.arch.n_params))
    for i, xq in enumerate(source_x):
        logits, trace = forward(params0, xq[None], RUNNING_STATS)
        per_sample[i] = np.abs(backward(trace, 2.0 * logits))
    # correctly rounded sums: result is independent of sample order
    total = np.array([math.fsum(column) for column in per_sample.T])
    return ImportanceVector(total / q, q, params0.checksum())

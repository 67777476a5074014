import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sparnet.model import Architecture, init_params  # noqa: E402

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def seed_setups():
    """Pretrained source model and importance per benchmark seed, built lazily once."""
    from sparnet.experiment import prepare_seed

    cache = {}

    def get(seed):
        if seed not in cache:
            cache[seed] = prepare_seed(seed)
        return cache[seed]

    get.cache = cache
    return get


def random_params(rng, d=5, hidden=(7,), n_classes=4, scale=1.0):
    """Small random network with non-trivial norm parameters and running stats."""
    arch = Architecture(d, hidden, n_classes)
    params = init_params(arch, rng)
    params.theta = params.theta + scale * 0.3 * rng.standard_normal(arch.n_params)
    params.running_mean = [0.2 * rng.standard_normal(h) for h in hidden]
    params.running_var = [rng.uniform(0.5, 2.0, h) for h in hidden]
    return params


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import warnings

import numpy as np
import pytest

from gfa.errors import ComplexityWarning, ConvergenceWarning
from gfa.model import ModelOptions
from gfa.preprocess import normalize
from gfa.sampler import run_chain
from gfa.synthetic import generate_gfa


def quiet_chain(data, options, seed=0, normalization=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ComplexityWarning)
        warnings.simplefilter("ignore", ConvergenceWarning)
        return run_chain(data, options, seed=seed, normalization=normalization)


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_gfa(n=60, dims=(12, 10, 8), seed=5)


@pytest.fixture(scope="session")
def small_fit(small_synthetic):
    """A short chain on centered small synthetic data: (samples, normalized data)."""
    data, record = normalize(small_synthetic.data, "center")
    opts = ModelOptions(K_init=8, iterations=400, burn_in=200, thin=5)
    return quiet_chain(data, opts, seed=1, normalization=record), data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria register their verdicts here; printed at the end of the run
ACCEPTANCE_RESULTS: list[str] = []


def record_criterion(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)

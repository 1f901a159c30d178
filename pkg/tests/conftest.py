import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from semicomp import SimConfig, simulate_dataset  # noqa: E402

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TOY_CONFIG = os.path.join(ROOT, "configs", "toy.yaml")


@pytest.fixture(scope="session")
def small_sim():
    """Six hospitals, 15 patients each, default truth."""
    return simulate_dataset(SimConfig(J=6, n_per_hospital=15, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the test run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

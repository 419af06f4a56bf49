import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mrfgnn.model import BinaryMRF, build_topology, sample_mrf  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def triangle():
    return BinaryMRF.from_edges(3, [(0, 1), (1, 2), (0, 2)], [0.5, 0.5, 0.5], [0.1, -0.2, 0.3])


def random_model(kind, n, seed):
    return sample_mrf(build_topology(kind, n), np.random.default_rng(seed))


# Verdict lines from the acceptance suite, echoed in the terminal summary.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

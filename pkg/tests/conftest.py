import os
from pathlib import Path

import numpy as np
import pytest

MNIST_DIR = Path(os.environ.get("OVACNN_MNIST_DIR", "/root/data/mnist"))


def mnist_available():
    return (MNIST_DIR / "train-labels-idx1-ubyte").exists() or (
        MNIST_DIR / "train-labels.idx1-ubyte"
    ).exists()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist():
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set OVACNN_MNIST_DIR)")
    from ovacnn.data import load_mnist

    return load_mnist(MNIST_DIR)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one acceptance line and fail the test when it did not pass."""

    def record(number, title, passed, detail=""):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import os
from pathlib import Path

import numpy as np
import pytest

MNIST_DIR = Path(os.environ.get("KANBASIS_MNIST_DIR", "/root/data/mnist"))

_criteria: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def report_criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(name, passed, detail=""):
        _criteria.append((name, bool(passed), detail))
        return passed

    return record


@pytest.fixture(scope="session")
def mnist_dir():
    if not (MNIST_DIR / "train-images-idx3-ubyte").exists() and not (
        MNIST_DIR / "train-images-idx3-ubyte.gz"
    ).exists():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set KANBASIS_MNIST_DIR)")
    return MNIST_DIR


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _criteria:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")

import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok, detail: str) -> None:
    """Record one acceptance line; ok=None marks a criterion that could not run."""
    status = "NOT RUN" if ok is None else ("PASS" if ok else "FAIL")
    line = f"criterion {criterion:2d}: {status:7s} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def _mnist_root():
    from snnbptt import data
    for root in (os.environ.get(data.DATA_DIR_ENV), Path.home() / ".cache" / "snnbptt", "/root/data"):
        if root is None:
            continue
        try:
            data.mnist_paths(root)
            return Path(root)
        except FileNotFoundError:
            continue
    return None


@pytest.fixture(scope="session")
def mnist_root():
    root = _mnist_root()
    if root is None:
        pytest.skip("MNIST not available; run `snnbptt fetch-data --dataset mnist`")
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

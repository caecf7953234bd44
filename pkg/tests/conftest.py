"""Shared synthetic data fixtures and acceptance-line reporting."""

import numpy as np
import pytest

from rdextrap.dataset import Dataset

LOW, HIGH = -850.0, -571.0

# one line per acceptance criterion, surfaced in the terminal summary so the
# PASS/FAIL verdicts appear without -s
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def two_group_scores(n, rng, lo=-1000.0, hi=-1.0):
    """Uniform scores with alternating cutoff labels."""
    x = rng.uniform(lo, hi, n)
    c = np.where(np.arange(n) % 2 == 0, LOW, HIGH)
    return x, c


def sharp_dataset(y, x, c):
    d = (x >= c).astype(float)
    return Dataset.from_arrays(y, x, c, d=d, design="sharp")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def linear_parallel(rng):
    """Noise-free DGP with exactly parallel linear control responses.

    Control response for the high group is 1 + 0.002 x, the low group sits
    0.14 below it, and the treatment adds a constant 0.19.
    """
    n = 4000
    x, c = two_group_scores(n, rng)
    d = (x >= c).astype(float)
    base = 1.0 + 0.002 * x
    y = base - 0.14 * (c == LOW) + 0.19 * d
    return sharp_dataset(y, x, c)


@pytest.fixture
def noisy_parallel(rng):
    """Same parallel-linear structure plus Gaussian noise."""
    n = 5000
    x, c = two_group_scores(n, rng)
    d = (x >= c).astype(float)
    base = 1.0 + 0.002 * x
    y = base - 0.14 * (c == LOW) + 0.19 * d + rng.normal(0, 0.3, n)
    return sharp_dataset(y, x, c)


@pytest.fixture
def single_group(rng):
    """One cutoff group with linear outcomes and noise, for engine tests."""
    n = 600
    x = rng.uniform(-10, 10, n)
    y = 2.0 + 3.0 * x + rng.normal(0, 1.0, n)
    c = np.full(n, 20.0)
    return sharp_dataset(y, x, c)

import numpy as np
import pytest

from fcvi.instances import cg1, qc1, qc1_nonsmooth, qq
from fcvi.problem import AffineConstraint, Box, QuadraticConstraint, build_kkt_instance


def random_monotone_matrix(rng: np.random.Generator, n: int) -> np.ndarray:
    """PSD symmetric part plus a skew part."""
    M = rng.standard_normal((n, n))
    S = rng.standard_normal((n, n))
    return 0.3 * M @ M.T / n + (S - S.T) / 2


def random_kkt_instance(rng: np.random.Generator, n: int = None, m: int = None):
    n = n or int(rng.integers(1, 11))
    m = int(rng.integers(0, 5)) if m is None else m
    box = Box(-np.ones(n), np.ones(n))
    x_star = rng.uniform(-0.5, 0.5, n)
    cons = []
    for _ in range(m):
        if rng.random() < 0.5:
            cons.append(AffineConstraint(rng.standard_normal(n)))
        else:
            R = rng.standard_normal((n, n))
            cons.append(QuadraticConstraint(R @ R.T / n + 0.1 * np.eye(n), rng.standard_normal(n)))
    lam = np.where(rng.random(m) < 0.6, rng.uniform(0.1, 2.0, m), 0.0)
    return build_kkt_instance(box, random_monotone_matrix(rng, n), cons, x_star, lam)


@pytest.fixture(scope="session")
def QC1():
    return qc1()


@pytest.fixture(scope="session")
def QQ():
    return qq()


@pytest.fixture(scope="session")
def QC1N():
    return qc1_nonsmooth()


@pytest.fixture(scope="session")
def CG1():
    return cg1()


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from phaseprice.converter import construct_rho
from phaseprice.phase_type import CphParams
from phaseprice.reference import BALANCED_CPH, PUBLISHED_CPH, PUBLISHED_LOGNORMAL
from phaseprice.rgrst import LognormalParams


@pytest.fixture(scope="session")
def published_model():
    return construct_rho(PUBLISHED_CPH, PUBLISHED_LOGNORMAL)


@pytest.fixture(scope="session")
def balanced_model():
    return construct_rho(BALANCED_CPH, PUBLISHED_LOGNORMAL)


@pytest.fixture(scope="session")
def two_band_model():
    p = CphParams([0.5, 0.5], [1.0], [1.0, 2.0])
    return construct_rho(p, LognormalParams(0.0, 1.0))


@pytest.fixture(scope="session")
def single_band_model():
    return construct_rho(CphParams([1.0], [], [0.7]), LognormalParams(0.3, 0.8))


def random_cph(rng, n, lam=(0.3, 3.0), c=(0.2, 2.0), floor=0.05):
    """Random Coxian parameters with every initial mass at least ``floor``."""
    alpha = rng.dirichlet(np.ones(n))
    alpha = floor + (1 - n * floor) * alpha
    alpha /= alpha.sum()
    return CphParams(alpha, rng.uniform(*lam, n - 1), rng.uniform(*c, n))


# acceptance lines, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

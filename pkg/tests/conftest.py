from pathlib import Path

import numpy as np
import pytest

from p2dident.defaults import SOC_FULL, V_MAX, V_MIN, nominal_grouped, nominal_ocps, nominal_physical
from p2dident.fit import ModelSetup

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def grouped():
    return nominal_grouped()


@pytest.fixture(scope="session")
def physical():
    return nominal_physical()


@pytest.fixture(scope="session")
def ocps():
    return nominal_ocps()


@pytest.fixture(scope="session")
def setup(ocps):
    return ModelSetup(ocps[0], ocps[1], SOC_FULL, 3.0, V_MIN, V_MAX)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, filled by test_acceptance.py.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

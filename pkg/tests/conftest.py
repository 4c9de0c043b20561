import sys

import numpy as np
import pytest

from eunc.dgp import load_scenario, sample


@pytest.fixture(scope="session")
def case1():
    return load_scenario("table1_case1")


@pytest.fixture(scope="session")
def case1_data(case1):
    return sample(case1, 500, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in module.VERDICTS:
            terminalreporter.write_line(line)

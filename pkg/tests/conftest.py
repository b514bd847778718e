import os

import pytest

from ringabo.model import make_params

DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture
def p_shallow():
    return make_params(None, 0.5, 2)


@pytest.fixture
def p_deep():
    return make_params(None, 3.0, 2)


@pytest.fixture
def data_dir():
    return DATA


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

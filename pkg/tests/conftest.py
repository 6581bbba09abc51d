from pathlib import Path

import pytest

from bhlab.model import derive_constants, reference_model

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def root():
    return ROOT


@pytest.fixture(scope="session")
def ref05():
    return reference_model(0.5)


@pytest.fixture(scope="session")
def ref025():
    return reference_model(0.25)


@pytest.fixture(scope="session")
def ref075():
    return reference_model(0.75)


@pytest.fixture(scope="session")
def c05(ref05):
    return derive_constants(ref05)


@pytest.fixture(scope="session")
def c025(ref025):
    return derive_constants(ref025)


@pytest.fixture(scope="session")
def c075(ref075):
    return derive_constants(ref075)


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

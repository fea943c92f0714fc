import pytest

from rcmdp.scenario import load_fixture

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def squander():
    return load_fixture("squander_save")


@pytest.fixture(scope="session")
def variance():
    return load_fixture("variance")


@pytest.fixture(scope="session")
def avar():
    return load_fixture("avar")


@pytest.fixture(scope="session")
def trivial():
    return load_fixture("trivial")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

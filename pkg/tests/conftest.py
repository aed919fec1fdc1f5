import numpy as np
import pytest

from powersec.grid import load_case

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ieee118():
    return load_case("ieee118")


@pytest.fixture(scope="session")
def two_bus():
    return load_case("two_bus")


@pytest.fixture(scope="session")
def three_bus():
    return load_case("three_bus")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

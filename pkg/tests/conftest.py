import pytest

from lagot.sampler import BaseMeasure, draw

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def normal1_1e5():
    return draw(BaseMeasure.standard_normal(1), 1, 100_000)


@pytest.fixture(scope="session")
def normal2_1e5():
    return draw(BaseMeasure.standard_normal(2), 1, 100_000)


@pytest.fixture(scope="session")
def normal2_2e4():
    return draw(BaseMeasure.standard_normal(2), 5, 20_000)


@pytest.fixture(scope="session")
def normal1_2e4():
    return draw(BaseMeasure.standard_normal(1), 5, 20_000)


@pytest.fixture
def record_criterion():
    def record(number, name, passed, detail):
        line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

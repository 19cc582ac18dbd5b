import pytest
from hypothesis import settings

from specdrop.geometry import make_grid

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def unit64():
    return make_grid(1.0, 1.0, 64)


@pytest.fixture(scope="session")
def unit128():
    return make_grid(1.0, 1.0, 128)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])

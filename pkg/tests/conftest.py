import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

# verdict lines collected from the acceptance suite, printed at the end of the run
CRITERION_LINES: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    detail = getattr(item, "criterion_detail", "")
    CRITERION_LINES[number] = f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'}  {title}" + (
        f"  [{detail}]" if detail else ""
    )


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERION_LINES):
        terminalreporter.write_line(CRITERION_LINES[number])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def detail(request):
    """Attach a one-line summary of measured values to the verdict line."""

    def _set(text: str):
        request.node.criterion_detail = text
        print(text)

    return _set

from __future__ import annotations

import warnings

import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")


def pytest_terminal_summary(terminalreporter):
    try:
        from acceptance_support import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)

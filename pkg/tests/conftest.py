import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from simreal.data import ReturnMatrix, business_days  # noqa: E402

# (criterion number, title, passed, detail) recorded by tests/test_acceptance.py
ACCEPTANCE_LINES: list[tuple[int, str, bool, str]] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append((number, title, bool(passed), detail))
    print(f"AC-{number:02d} {'PASS' if passed else 'FAIL'} {title} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_LINES):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"AC-{number:02d} {status} {title} {detail}".rstrip())


def make_returns(values, start="2020-01-01", tickers=None) -> ReturnMatrix:
    values = np.asarray(values, dtype=float)
    T, n = values.shape
    tickers = tickers or tuple(f"A{i}" for i in range(n))
    return ReturnMatrix(business_days(start, T), tuple(tickers), values)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_returns():
    rng = np.random.default_rng(7)
    return make_returns(rng.normal(0.0005, 0.01, size=(40, 3)))

import numpy as np
import pytest

_VERDICTS = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)

"""Shared pytest hooks: the acceptance suite reports one verdict line per criterion."""

import pytest

_VERDICTS: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training studies (deselect with -m 'not slow')")


@pytest.fixture
def verdict():
    """Record ``(criterion, passed, detail)`` and print it immediately."""

    def record(criterion: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
        _VERDICTS.append(line)
        print(line, flush=True)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)

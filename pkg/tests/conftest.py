import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion and return the verdict."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)

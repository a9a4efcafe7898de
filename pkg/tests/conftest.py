import pytest

_RESULTS = {}


@pytest.fixture
def record_acceptance():
    """Record ``(criterion, passed, detail)`` for the end-of-run acceptance summary."""

    def record(criterion, passed, detail):
        _RESULTS[criterion] = (bool(passed), detail)
        print(f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=lambda k: int(k.split()[0])):
        passed, detail = _RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {key}: {detail}")

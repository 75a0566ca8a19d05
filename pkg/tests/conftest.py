import pytest

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the verdict of one acceptance criterion for the summary."""

    def record(number: int, checks: dict[str, bool], detail: str) -> bool:
        ok = all(checks.values())
        failed = [name for name, passed in checks.items() if not passed]
        note = detail if ok else f"{detail}; failed: {', '.join(failed)}"
        _CRITERIA[number] = (ok, note)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, note = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {note}")

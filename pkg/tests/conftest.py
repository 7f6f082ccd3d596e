import pytest

_ACCEPTANCE = []


@pytest.fixture
def record():
    """Record one acceptance criterion outcome for the terminal summary."""

    def _record(number, title, passed, detail):
        _ACCEPTANCE.append((number, title, bool(passed), detail))
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} | {detail}")

import pytest

# (criterion number, passed, detail) recorded by the acceptance suite
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for one acceptance criterion, then assert it."""

    def check(number, passed, detail):
        ACCEPTANCE_LINES.append((number, bool(passed), detail))
        assert passed, f"criterion {number}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {detail}")

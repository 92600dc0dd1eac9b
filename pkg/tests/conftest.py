import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion."""

    def record(number, ok, detail):
        _CRITERIA[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    def order(key):
        digits = "".join(ch for ch in str(key) if ch.isdigit())
        return int(digits), str(key)

    for number in sorted(_CRITERIA, key=order):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {str(number):>3}: {'PASS' if ok else 'FAIL'}  {detail}")

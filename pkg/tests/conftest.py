import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(k, passed, detail)."""
    def record(k, passed, detail=""):
        # criteria split over several tests pass only if every part passes
        prev_ok, prev_detail = _CRITERIA.get(k, (True, ""))
        _CRITERIA[k] = (prev_ok and bool(passed), "; ".join(d for d in (prev_detail, detail) if d))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

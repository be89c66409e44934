import pytest

ACCEPTANCE_CRITERIA = range(1, 11)
_results: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record a pass/fail line for an acceptance criterion, then assert it."""

    def record(n: int, ok: bool, detail: str) -> None:
        ok = bool(ok)
        previous = _results.get(n)
        if previous is not None:
            # a criterion split over several tests passes only if all parts do
            ok = ok and previous[0]
            detail = f"{previous[1]}; {detail}"
        _results[n] = (ok, detail)
        assert ok, f"acceptance {n}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in ACCEPTANCE_CRITERIA:
        if n in _results:
            ok, detail = _results[n]
            terminalreporter.write_line(f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"ACCEPTANCE {n}: NOT RUN")

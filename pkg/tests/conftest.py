import pytest

_CRITERIA: dict[int, list[tuple[str, str]]] = {}


@pytest.fixture
def criterion():
    """record(n, ok, detail): log one acceptance outcome; a failed one also fails the test."""

    def record(n: int, ok: bool | None, detail: str) -> None:
        status = {True: "PASS", False: "FAIL", None: "XFAIL"}[ok]
        _CRITERIA.setdefault(n, []).append((status, detail))
        print(f"criterion {n}: {status} {detail}")
        assert ok is not False, f"criterion {n} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        for status, detail in _CRITERIA[n]:
            terminalreporter.write_line(f"criterion {n:>2}: {status:<5} {detail}")

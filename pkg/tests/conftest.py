import pytest

_CRITERIA: dict[int, list[str]] = {}


@pytest.fixture
def record_criterion():
    """Print and remember one PASS/FAIL line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str, extra: str = "") -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = [line, *extra.splitlines()]
        print(line)
        if extra:
            print(extra)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            for line in _CRITERIA[n]:
                terminalreporter.write_line(line)

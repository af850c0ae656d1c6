import pytest

ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(label, passed, detail)``."""
    def record(label: str, passed: bool, detail: str):
        ACCEPTANCE.append((label, bool(passed), detail))
        print(f"{label}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0].split()[1])):
        terminalreporter.write_line(f"{label}: {'PASS' if passed else 'FAIL'}  {detail}")

import pytest

_RESULTS = []


@pytest.fixture(scope="session")
def report():
    def record(name: str, ok: bool, detail: str) -> None:
        _RESULTS.append(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(_RESULTS[-1])
    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)

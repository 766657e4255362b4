import pytest

_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdicts():
    """Acceptance tests append one ``PASS``/``FAIL`` line per criterion here."""
    return _VERDICTS


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)

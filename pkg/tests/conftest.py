import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(capsys):
    """Record one acceptance line; also echoed in the terminal summary."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

import pytest


def pytest_configure(config):
    config._criterion_lines = []


@pytest.fixture
def record(request, capsys):
    """Print and keep one PASS/FAIL line per acceptance criterion."""

    def _record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        request.config._criterion_lines.append(line)
        with capsys.disabled():
            print("\n" + line)

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

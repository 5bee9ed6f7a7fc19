"""Collects one verdict line per acceptance criterion for the terminal summary."""

import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict(request):
    """Call ``verdict(n, ok, detail)``; the line is printed now and again in the summary."""

    def record(n, ok, detail):
        line = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        _VERDICTS.append(line)
        with request.config.pluginmanager.getplugin("capturemanager").global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

import pytest


def pytest_configure(config):
    config._criteria = {}


@pytest.fixture(scope="session")
def record_criterion(request):
    """Store one PASS/FAIL line per acceptance criterion for the terminal summary."""
    store = request.config._criteria

    def record(k, res, seconds=None, extra_ok=True):
        ok = res.passed and extra_ok
        parts = [f"{c.name}={c.value:.4g} ({c.threshold}){'' if c.passed else ' !'}" for c in res.checks]
        if seconds is not None:
            parts.append(f"runtime={seconds:.1f}s")
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  " + "; ".join(parts)
        store[k] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criteria", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])

import pytest

ACCEPTANCE_KEY = pytest.StashKey[dict]()
N_CRITERIA = 10


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def report(request):
    """Record one acceptance line, then assert it."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def _report(n: int, ok: bool, detail: str):
        lines[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, lines[n]

    return _report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(lines.get(n, f"criterion {n:>2}: FAIL  did not complete"))

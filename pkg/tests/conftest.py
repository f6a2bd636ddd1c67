import pytest

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Register a numbered acceptance line; it reads FAIL until the test reports."""
    results = request.config.stash[ACCEPTANCE]

    def open_line(num: int, title: str):
        results[num] = (title, False, "did not finish")

        def report(ok: bool, detail: str) -> bool:
            results[num] = (title, bool(ok), detail)
            return bool(ok)

        return report

    return open_line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance")
    for num in sorted(results):
        title, ok, detail = results[num]
        terminalreporter.write_line(f"{num:2d}. {'PASS' if ok else 'FAIL'}  {title}  ({detail})")

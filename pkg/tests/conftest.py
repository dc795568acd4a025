import pytest

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance check: ``criterion("3", "KS uniformity", ok, detail)``."""
    store = request.config.stash[_CRITERIA]

    def record(number: str, part: str, ok: bool, detail: str = "") -> bool:
        store.setdefault(number, []).append((part, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash[_CRITERIA]
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store, key=int):
        parts = store[number]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{part}: {'ok' if ok else 'FAILED'}{' (' + d + ')' if d else ''}"
                           for part, ok, d in parts)
        terminalreporter.write_line(f"criterion {number}: {verdict} | {detail}")

import pytest

ACCEPTANCE_KEY = pytest.StashKey[dict]()
ACCEPTANCE_COUNT = 9


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def record_criterion(request):
    """Store ``(passed, detail)`` for an acceptance criterion; printed in the terminal summary."""
    store = request.config.stash[ACCEPTANCE_KEY]

    def record(number, title, passed, detail):
        store[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, ACCEPTANCE_COUNT + 1):
        if number in store:
            title, passed, detail = store[number]
            terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
        else:
            terminalreporter.write_line(f"[FAIL] {number}. not recorded (test did not reach its verdict)")

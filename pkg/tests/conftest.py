import pytest

# (criterion, description, passed, detail) records filled by test_acceptance
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit, desc, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda r: (r[0], r[1])):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {crit}. {desc}: {detail}")


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(12345)

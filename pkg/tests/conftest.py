import pytest

from optotrap.params import ground_state_setup, reference_system, reference_trap_drive

# acceptance criterion -> (passed, detail), filled in by test_acceptance
ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture
def reference():
    return reference_system()


@pytest.fixture
def trap(reference):
    return reference_trap_drive(reference)


@pytest.fixture
def ground_state():
    return ground_state_setup(1e4)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")

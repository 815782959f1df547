import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def overfit_runs():
    """Overfit recipe outcomes per seed, with the wall time each run took.

    Shared by the acceptance criteria and the trainer's loss-trend property so
    each seed is trained once per session.
    """
    from mrrawnet.recipes import overfit_config, run_overfit

    cache: dict = {}

    def get(seed: int):
        if seed not in cache:
            start = time.perf_counter()
            outcome = run_overfit(overfit_config(seed))
            cache[seed] = (outcome, time.perf_counter() - start)
        return cache[seed]

    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])

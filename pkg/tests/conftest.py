import math

import pytest

from sgc_entangle import ModelParams, SteadyState, coherence_from_r_theta, make_grid, sample

DARK = (0.0, math.pi)


@pytest.fixture(scope="session")
def small_state():
    """delta=0.2, eta=0.3 at dark coherence: K ~ 9, cheap on a dense grid."""
    return SteadyState.build(ModelParams(delta=0.2, eta=0.3), coherence_from_r_theta(*DARK))


@pytest.fixture(scope="session")
def small_wave(small_state):
    return sample(small_state, make_grid(small_state))


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

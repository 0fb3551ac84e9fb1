import numpy as np
import pytest

from ovilab.mdp import make_linear_mdp, make_sphere_mdp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def linear_mdp_d4():
    return make_linear_mdp(4, 8, 3, 3, rng_seed=7)


@pytest.fixture(scope="session")
def sphere_mdp_d3():
    return make_sphere_mdp(3, 5, 3, 2, rng_seed=0)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def log(number, ok, message):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {message}"
        lines.append((number, line))
        print(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

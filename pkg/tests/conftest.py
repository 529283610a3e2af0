import numpy as np
import pytest

from pwmpc.kepler import OrbitParams
from pwmpc.planner import ConstraintSet, PlanningConfig, build_los_constraints
from pwmpc.tschauner_hempel import TschaunerHempelPlant

X0_NOMINAL = np.array([250.0, 400.0, -200.0, 5.0, -5.0, -5.0])


@pytest.fixture(scope="session")
def orbit():
    return OrbitParams.from_perigee(0.7, 500e3, np.deg2rad(45.0))


@pytest.fixture(scope="session")
def plant(orbit):
    return TschaunerHempelPlant(orbit)


@pytest.fixture
def cfg():
    return PlanningConfig(N_p=50, T=60.0, u_max=0.1, alpha=1e3, cost_length_unit=1e3, k_a=30)


@pytest.fixture(scope="session")
def los():
    return ConstraintSet(*build_los_constraints(np.tan(np.deg2rad(30.0)), 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, text: str) -> str:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {text}"
    ACCEPTANCE_LINES[number] = line
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])

import numpy as np
import pytest

from gdpp.config import load_config, shipped_configs
from gdpp.generators import Generator
from gdpp.problem import ControlProblem, control_grid_from_box


@pytest.fixture
def gheat_gen():
    return Generator.scalar([0.25, 1.0])


@pytest.fixture
def penalized_gen():
    return Generator.scalar([0.25, 1.0], penalties=[0.3, 0.0])


@pytest.fixture
def heat_problem():
    return ControlProblem.from_strings(1, 1, 1, sigma=[["1"]], Phi="x1^2",
                                       control_grid=[[0.0]], lipschitz_L=1.0)


@pytest.fixture
def drift_problem():
    return ControlProblem.from_strings(1, 1, 1, b=["u1"], sigma=[["1"]], Phi="x1",
                                       control_grid=control_grid_from_box([-1], [1], [5]),
                                       lipschitz_L=1.0)


@pytest.fixture(scope="session")
def configs():
    return {name: load_config(path) for name, path in shipped_configs().items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """``criterion(k, passed, detail)`` records one summary line for the run."""
    def record(number, passed, detail):
        ACCEPTANCE_LINES.append(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

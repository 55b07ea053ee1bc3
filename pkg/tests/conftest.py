import numpy as np
import pytest

from flexmpc.lyapunov import problem3_weights, state_norm_gdclf
from flexmpc.model import brockett_variant
from flexmpc.mpc import FlexStepConfig, flexible_step_run
from flexmpc.ocp import OcpSpec, QuadraticStageCost

X0 = np.array([1.0, 2.0, 3.0, 5.0])


@pytest.fixture(scope="session")
def brockett():
    return brockett_variant()


@pytest.fixture(scope="session")
def problem3_spec():
    return OcpSpec(Np=10, f0=QuadraticStageCost(1.0, 5.0), gdclf=state_norm_gdclf(10, problem3_weights(10), 1e-5))


@pytest.fixture(scope="session")
def problem3_trace(brockett, problem3_spec):
    cfg = FlexStepConfig(initial_guess=np.ones((10, 2)))
    return flexible_step_run(brockett, problem3_spec, X0, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
